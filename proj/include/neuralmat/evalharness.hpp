#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "neuralmat/brdf.hpp"
#include "neuralmat/feature_stats.hpp"
#include "neuralmat/fixtures.hpp"
#include "neuralmat/material_space.hpp"

namespace neuralmat {

/// Gram-only descriptor L1 of the two full images at a single scale.
/// Throws std::invalid_argument when the sizes differ.
double style_error(FeatureExtractor& extractor, const Image& a, const Image& b);

/// Mean over unordered pairs of the summed per-layer mean |F_a - F_b|.
/// Needs at least two same-sized realizations.
double diversity(FeatureExtractor& extractor, const std::vector<Image>& realizations);

/// Gamma 2.2 decode, linear sRGB to CIE XYZ (D65), then per-axis normalized
/// histograms over [0, 1] and the mean L1 difference across the three axes.
double xyz_histogram_l1(const Image& a, const Image& b, int bins = 64);

std::array<double, 3> srgb_to_xyz(double r, double g, double b);

struct BenchmarkConfig {
  int n_lights = 10;
  std::uint64_t seed = 0;
  double cap_half_angle_deg = 60.0;
  double light_distance = 2.0;
  /// Four times the flash intensity, which offsets the falloff at distance 2.
  double light_intensity = 4.0 * default_flash_intensity();
  int realizations = 3;
  CaptureGeometry flash;
  RenderOptions render;
};

/// Point lights uniform over a spherical cap above the plane centre.
std::vector<Vec3> sample_lights(int n, std::uint64_t seed, double cap_half_angle_deg, double distance);

/// Produces maps for one fixture from its flash image. Output must match the
/// fixture size.
using BenchmarkMethod = std::function<MaterialMaps(const Image& flash, const Fixture& fixture, std::uint64_t seed)>;

BenchmarkMethod ground_truth_method();
BenchmarkMethod constant_gray_method();
/// capture (optionally fine-tuned) and reference-statistics synthesis.
BenchmarkMethod model_method(Model& model, bool tune, const FinetuneConfig& finetune = {});

struct MaterialScore {
  std::string name;
  double style_flash = 0;
  double style_relit = 0;
  double diversity = 0;
  double xyz_hist_l1 = 0;
};

struct BenchmarkReport {
  std::string method;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::vector<Vec3> lights;
  std::vector<MaterialScore> materials;
  MaterialScore mean;

  std::string to_json() const;
  std::string to_csv() const;
  std::string to_markdown() const;
};

BenchmarkReport relight_benchmark(FeatureExtractor& extractor, const std::vector<Fixture>& fixtures,
                                  const BenchmarkMethod& method, const BenchmarkConfig& config,
                                  const std::string& method_name = "method");

}  // namespace neuralmat
