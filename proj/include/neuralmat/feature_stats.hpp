#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuralmat/image.hpp"
#include "neuralmat/rng.hpp"

namespace neuralmat {

/// VGG-19 convolution stack up to the first convolution of block five.
///
/// Weights come from a serialized file when one is given (a torchvision VGG-19
/// `features` module saved with TorchScript, or an archive written by
/// `save_weights`), otherwise they are drawn from a seeded He-normal
/// initialization with zero biases. `width_scale` shrinks every layer for
/// desk-scale runs; it must be 1 to load the standard pretrained file.
struct ExtractorConfig {
  double width_scale = 1.0;
  int native_resolution = 224;
  std::uint64_t seed = 0;
  std::string weights_path;
};

class FeatureExtractorImpl : public torch::nn::Module {
 public:
  static constexpr int kStyleLayers = 5;

  explicit FeatureExtractorImpl(ExtractorConfig config = {});

  /// images: [N, 3, H, W] sRGB in [0, 1]. Returns the five style-layer
  /// activations (after ReLU), shallow to deep.
  std::vector<torch::Tensor> forward(const torch::Tensor& images);

  void load_weights(const std::filesystem::path& path);
  void save_weights(const std::filesystem::path& path);

  const ExtractorConfig& config() const { return config_; }
  std::vector<int> layer_channels() const;

 private:
  ExtractorConfig config_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<int> conv_index_;  // torchvision `features` index of each conv
  torch::Tensor input_mean_, input_std_;
};
TORCH_MODULE(FeatureExtractor);

/// Square crop centred at (center_x, center_y) pixels. The crop side is
/// scale * native resolution before resampling, clamped to the image.
struct CropSpec {
  double center_x = 0.0;
  double center_y = 0.0;
  double scale = 1.0;
};

struct TextureLossConfig {
  int n_crops = 4;
  double scale_min = 0.1;
  double scale_max = 8.0;
  double spectrum_weight = 1e-3;
  bool fourier = true;
};

constexpr int kMinCroppableSize = 16;

/// Per-layer statistics of one or more crops; tensors carry a leading batch dim.
struct TextureDescriptor {
  std::vector<torch::Tensor> grams;    // [N, C, C]
  std::vector<torch::Tensor> spectra;  // [N, B]
};

/// G[i, j] = sum_p f_i(p) f_j(p) / (H W). features: [C, H, W] or [N, C, H, W].
torch::Tensor gram(const torch::Tensor& features);

/// Radially binned power spectrum averaged over channels. Uses the
/// orthonormal 2-D DFT, so the bins of one map sum to mean_c sum_p f_c(p)^2.
/// Bin k collects frequencies with round(|f| * max(H, W)) == k, the last bin
/// also takes everything beyond it. features: [C, H, W] or [N, C, H, W], H, W >= 4.
torch::Tensor power_spectrum(const torch::Tensor& features);

/// Image tensor [3, H, W] from a planar Image.
torch::Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const torch::Tensor& t);

int crop_side(const CropSpec& crop, int image_width, int image_height, int native_resolution);

/// Draws scales log-uniformly in [scale_min, scale_max] and centres uniformly
/// over positions where the whole crop fits.
std::vector<CropSpec> sample_crops(int image_width, int image_height, int n, const TextureLossConfig& cfg,
                                   int native_resolution, Rng& rng);

/// Resamples the crops of image [3, H, W] to [N, 3, R, R], R the native resolution.
torch::Tensor resample_crops(const torch::Tensor& image, const std::vector<CropSpec>& crops, int native_resolution);

/// Feature stack of one crop, each tensor [1, C, h, w]. Throws
/// std::invalid_argument for images below kMinCroppableSize.
std::vector<torch::Tensor> extract_patch(FeatureExtractor& extractor, const torch::Tensor& image,
                                         const CropSpec& crop);

TextureDescriptor describe(const std::vector<torch::Tensor>& features, bool with_spectrum);

/// Per-item L1 distance [N]: sum over layers of mean |dGram| plus
/// spectrum_weight times mean |dSpectrum| when spectra are present.
torch::Tensor descriptor_l1(const TextureDescriptor& a, const TextureDescriptor& b, double spectrum_weight);

/// Monte-Carlo texture distance over n_crops paired crops drawn from `seed`.
/// Differentiable with respect to both images. images are [3, H, W], same size.
torch::Tensor texture_distance(FeatureExtractor& extractor, const torch::Tensor& img_a, const torch::Tensor& img_b,
                               const TextureLossConfig& cfg, std::uint64_t seed);

double texture_distance(FeatureExtractor& extractor, const Image& a, const Image& b, const TextureLossConfig& cfg,
                        std::uint64_t seed);

}  // namespace neuralmat
