#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuralmat/brdf.hpp"
#include "neuralmat/material_nets.hpp"
#include "neuralmat/noise_field.hpp"
#include "neuralmat/training.hpp"

namespace neuralmat {

enum class Provenance { Captured, Sampled, Interpolated };
const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// A latent code together with the decoder that renders it. Treated as an
/// immutable value: operations return new materials and never touch the
/// decoder weights of their inputs.
struct Material {
  std::string id;
  torch::Tensor z;  ///< [1, d]
  Decoder decoder{nullptr};
  Provenance provenance = Provenance::Sampled;
  std::vector<std::string> parents;
  std::string source;   ///< source image, if any
  std::string base_id;  ///< checkpoint the decoder weights descend from
  bool tuned = false;
  AlphaMode alpha_mode = AlphaMode::Squared;
  std::uint64_t seed = 0;

  const DecoderConfig& decoder_config() const { return decoder->config(); }
};

/// Reference crop used to freeze AdaIN statistics.
constexpr int kReferenceCropSize = 512;

struct SynthesisRequest {
  Int2 origin{0, 0};
  Int2 size{256, 256};
  std::uint64_t seed = 0;
  StatsMode mode = StatsMode::Reference;
};

struct SynthesisOptions {
  int tile = 256;
  int margin = 80;  ///< covers the decoder reach (76 px) rounded up to 16
  int reference_size = kReferenceCropSize;
};

Material capture(Model& model, const Image& flash, bool tune, const FinetuneConfig& config = {},
                 const std::string& source = {});
Material sample_prior(Model& model, std::uint64_t seed);
/// z and every decoder parameter are lerped as (1 - t) a + t b. Throws
/// std::invalid_argument on architecture mismatch, t outside [0, 1], or
/// parents tuned from different base checkpoints.
Material interpolate(const Material& a, const Material& b, double t);

/// AdaIN statistics of the reference crop of `seed` (origin (0, 0)).
AdainStats reference_statistics(const Material& material, std::uint64_t seed, int size = kReferenceCropSize);

/// Maps for the requested region of the infinite field. Origin and size must
/// be multiples of 16. Tiles of a fixed size are decoded with a margin and
/// trimmed, so memory stays bounded for any region.
MaterialMaps synthesize(const Material& material, const SynthesisRequest& request, const SynthesisOptions& options = {});

/// Single decode of a noise crop (no tiling), returning maps [1, 6, H, W].
torch::Tensor decode_crop(const Material& material, Int2 origin, Int2 size, std::uint64_t seed, StatsMode mode,
                          const AdainStats* reference = nullptr);

enum class MapFormat { Png16, Exr };
MapFormat map_format_from_string(const std::string& s);
const char* to_string(MapFormat f);

struct ExportInfo {
  std::string id;
  std::vector<std::string> parents;
  std::uint64_t seed = 0;
  Int2 origin{0, 0};
  Int2 size{0, 0};
  AlphaMode alpha_mode = AlphaMode::Squared;
  double height_max = 2.0;
};

inline const std::vector<std::string>& exported_map_names() {
  static const std::vector<std::string> names{"diffuse", "specular", "roughness", "normal", "height"};
  return names;
}

/// Writes diffuse, specular, roughness, normal (from height) and height images
/// plus manifest.json. Returns the manifest path.
std::filesystem::path export_maps(const MaterialMaps& maps, const std::filesystem::path& dir, MapFormat format,
                                  const ExportInfo& info);
/// Reads an exported bundle back. Height is restored from the height image;
/// the normal image is only checked against its hash.
MaterialMaps import_maps(const std::filesystem::path& dir_or_manifest);

/// Material bundle: material.json, decoder.pt, checksums.json.
void save_material(const Material& material, const std::filesystem::path& dir);
Material load_material(const std::filesystem::path& dir);

}  // namespace neuralmat
