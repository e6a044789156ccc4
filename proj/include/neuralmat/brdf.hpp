#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "neuralmat/image.hpp"

namespace neuralmat {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const { return *this * (1.0 / norm()); }
};

constexpr double kMinRoughness = 0.01;

/// Linear radiance of a white Lambertian plane at unit distance maps to sRGB 0.85
/// at the image center with this intensity.
inline double default_flash_intensity() { return std::numbers::pi * std::pow(0.85, 2.2); }

enum class AlphaMode { Squared, Linear };

const char* to_string(AlphaMode mode);
AlphaMode alpha_mode_from_string(const std::string& s);

/// Per-pixel BRDF parameters on an H x W grid, channel-planar.
///
/// diffuse holds three planes (RGB), the rest one plane each. The height map is
/// in pixels at reference scale; normals are derived from it by central
/// differences unless an explicit tangent-space normal map is attached (used
/// for ingested map sets that ship normal.png only).
struct MaterialMaps {
  int width = 0;
  int height = 0;
  std::vector<double> diffuse;
  std::vector<double> specular;
  std::vector<double> roughness;
  std::vector<double> height_map;
  std::optional<std::vector<double>> normals;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  static MaterialMaps uniform(int width, int height, Vec3 diffuse_rgb, double specular, double roughness,
                              double height_value = 0.0);

  /// Throws std::invalid_argument when plane sizes disagree, values are
  /// non-finite, or a channel leaves its valid range.
  void validate() const;
};

struct CaptureGeometry {
  double fov_deg = 45.0;
  double plane_distance = 1.0;
  double rotation_h = 0.0;  ///< radians, about the image vertical axis
  double rotation_v = 0.0;  ///< radians, about the image horizontal axis
  double light_intensity = default_flash_intensity();
  /// Point light position in camera space; the camera sits at (0, 0, plane_distance)
  /// looking down -z at the plane z = 0. Unset means collocated flash.
  std::optional<Vec3> light_position;

  void validate() const;
  Vec3 camera_position() const { return {0.0, 0.0, plane_distance}; }
  Vec3 light() const { return light_position.value_or(camera_position()); }
};

struct RenderOptions {
  AlphaMode alpha_mode = AlphaMode::Squared;
  double pixel_scale = 1.0;
};

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<double> radiance;  ///< three planes, linear

  Image srgb() const;
  Image linear() const;
};

struct MaterialGradients {
  std::vector<double> diffuse;
  std::vector<double> specular;
  std::vector<double> roughness;
  std::vector<double> height_map;
};

// Microfacet terms.
double fresnel_schlick(double cos_theta, double f0);
/// GGX normal distribution. Throws std::invalid_argument for alpha <= 0.
double ggx_ndf(double n_dot_h, double alpha);
/// Smith masking for GGX, Lambda(cos) = (sqrt(1 + alpha^2 tan^2) - 1) / 2.
double smith_lambda(double cos_theta, double alpha);
/// Height-correlated Smith G = 1 / (1 + Lambda(l) + Lambda(v)).
/// Throws std::invalid_argument when a cosine is not strictly positive.
double smith_g(double n_dot_l, double n_dot_v, double alpha);

double roughness_to_alpha(double roughness, AlphaMode mode);

/// Unit tangent-space normals (three planes; x right, y up, z out) from a
/// height field by central differences, one-sided on the border.
std::vector<double> height_to_normals(std::span<const double> height, int width, int rows, double pixel_scale = 1.0);

RenderedImage shade(const MaterialMaps& maps, const CaptureGeometry& geom, const RenderOptions& opts = {});

/// Vector-Jacobian product of shade: gradients of sum(upstream * radiance)
/// with respect to every parameter plane.
MaterialGradients shade_gradient(const MaterialMaps& maps, const CaptureGeometry& geom,
                                 std::span<const double> upstream, const RenderOptions& opts = {});

}  // namespace neuralmat
