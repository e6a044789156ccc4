#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "neuralmat/brdf.hpp"
#include "neuralmat/noise_field.hpp"

namespace neuralmat {

// Only guards constant channels; larger values bias the output std of
// low-variance channels.
constexpr double kAdainEpsilon = 1e-8;

/// Channel layout of decoder outputs.
enum MapChannel : int { kDiffuseR = 0, kDiffuseG, kDiffuseB, kSpecular, kRoughness, kHeight, kMapChannels };

/// (target_std / sigma_F) * (x - mu_F) + target_mean with instance statistics
/// of x, sigma_F = sqrt(var + eps). x: [N, C, H, W]; targets: [N, C].
torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& target_mean, const torch::Tensor& target_std);

/// Same remapping with externally supplied feature statistics ([N, C] or [1, C]).
torch::Tensor adain_with_stats(const torch::Tensor& x, const torch::Tensor& feature_mean,
                               const torch::Tensor& feature_std, const torch::Tensor& target_mean,
                               const torch::Tensor& target_std);

/// z = mean + exp(log_variance / 2) * eps with eps ~ N(0, I) drawn from `seed`.
torch::Tensor reparameterize(const torch::Tensor& mean, const torch::Tensor& log_variance, std::uint64_t seed);

/// Affine map from a latent code to per-channel AdaIN targets: a
/// (d + 1) x (2 c) matrix acting on (z, 1). The std half goes through
/// softplus + eps.
class StyleMapImpl : public torch::nn::Module {
 public:
  StyleMapImpl(int latent_dim, int channels);
  /// Pre-squash output [N, 2c].
  torch::Tensor affine(const torch::Tensor& z);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z);
  int channels() const { return channels_; }

 private:
  int channels_;
  torch::nn::Linear linear_{nullptr};
};
TORCH_MODULE(StyleMap);

enum class StatsMode { PerCrop, Reference };

/// Frozen instance statistics, one entry per conditioned layer, each [1, C].
struct AdainStats {
  std::vector<torch::Tensor> mean;
  std::vector<torch::Tensor> std;
  bool empty() const { return mean.empty(); }
};

struct DecoderConfig {
  int latent_dim = 64;
  int noise_channels = NoiseField::kDefaultChannels;
  std::vector<int> widths{32, 64, 128, 256, 256};
  bool skip_connections = true;  ///< false gives the decoder-only ablation
  double height_max = 2.0;
};

/// Noise-to-maps U-Net: four max-pool levels down, bilinear upsampling plus
/// convolution back up, every convolution followed by AdaIN whose targets come
/// from the latent code. Nothing reads absolute position.
class DecoderImpl : public torch::nn::Module {
 public:
  static constexpr int kLevels = 5;
  static constexpr int kSizeMultiple = 16;

  explicit DecoderImpl(DecoderConfig config = {});

  /// noise: [N, noise_channels, H, W] with H, W multiples of 16; z: [N, d].
  /// Returns squashed maps [N, 6, H, W]. In Reference mode `reference`
  /// supplies the feature statistics; `record` receives the per-crop ones.
  torch::Tensor forward(const torch::Tensor& noise, const torch::Tensor& z, StatsMode mode = StatsMode::PerCrop,
                        const AdainStats* reference = nullptr, AdainStats* record = nullptr);

  std::pair<torch::Tensor, torch::Tensor> style_params(const torch::Tensor& z, int layer) {
    return styles_.at(layer)->forward(z);
  }
  StyleMap style_map(int layer) const { return styles_.at(layer); }
  int conditioned_layers() const { return static_cast<int>(styles_.size()); }
  const DecoderConfig& config() const { return config_; }

 private:
  torch::Tensor condition(const torch::Tensor& x, const torch::Tensor& z, int layer, StatsMode mode,
                          const AdainStats* reference, AdainStats* record);

  DecoderConfig config_;
  std::vector<torch::nn::Conv2d> down_, up_;
  torch::nn::Conv2d out_{nullptr};
  std::vector<StyleMap> styles_;
};
TORCH_MODULE(Decoder);

/// Fresh decoder with the same configuration and a copy of every parameter and buffer.
Decoder clone_decoder(const Decoder& decoder);

struct EncoderConfig {
  int latent_dim = 64;
  std::vector<int> blocks{3, 4, 6, 3};  ///< bottleneck blocks per stage (50 layers)
  int base_width = 64;
  int input_width = 512;
  int input_height = 384;
};

struct EncoderOutput {
  torch::Tensor mean;          // [N, d]
  torch::Tensor log_variance;  // [N, d]
  torch::Tensor angles;        // [N, 2], (horizontal, vertical) in (-pi/4, pi/4)
};

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
  torch::nn::BatchNorm2d b1_{nullptr}, b2_{nullptr}, b3_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Residual bottleneck classifier backbone mapping a flash image to the
/// latent posterior and, through a separate head on the pooled features, the
/// two plane alignment angles.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderConfig config = {});
  /// images: [N, 3, input_height, input_width] sRGB in [0, 1].
  EncoderOutput forward(const torch::Tensor& images);
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  torch::nn::Sequential stem_{nullptr}, stages_{nullptr};
  torch::nn::Linear posterior_{nullptr}, alignment_{nullptr};
};
TORCH_MODULE(Encoder);

torch::Tensor noise_to_tensor(const NoiseCrop& crop);

/// Decoder output [6, H, W] (or [1, 6, H, W]) to renderer maps. Values are
/// clamped into the valid ranges to absorb float rounding at the squash limits.
MaterialMaps maps_from_tensor(const torch::Tensor& maps);
torch::Tensor maps_to_tensor(const MaterialMaps& maps);

}  // namespace neuralmat
