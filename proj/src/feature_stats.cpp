#include "neuralmat/feature_stats.hpp"

#include <torch/script.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace neuralmat {

namespace F = torch::nn::functional;

namespace {

// torchvision VGG-19 `features` layout up to conv5_1: (index, block).
struct ConvSlot {
  int index;
  int block;
};
constexpr ConvSlot kVggSlots[] = {{0, 0},  {2, 0},  {5, 1},  {7, 1},  {10, 2}, {12, 2}, {14, 2}, {16, 2},
                                  {19, 3}, {21, 3}, {23, 3}, {25, 3}, {28, 4}};
constexpr int kBlockWidth[] = {64, 128, 256, 512, 512};

int scaled_width(int base, double scale) { return std::max(1, static_cast<int>(std::lround(base * scale))); }

// Parses the torchvision feature index from names like "features.10.weight" or "10.bias".
std::optional<std::pair<int, std::string>> parse_param_name(const std::string& name) {
  const auto last = name.rfind('.');
  if (last == std::string::npos) return std::nullopt;
  const std::string kind = name.substr(last + 1);
  if (kind != "weight" && kind != "bias") return std::nullopt;
  const std::string head = name.substr(0, last);
  const auto prev = head.rfind('.');
  const std::string idx = prev == std::string::npos ? head : head.substr(prev + 1);
  if (idx.empty() || !std::all_of(idx.begin(), idx.end(), ::isdigit)) return std::nullopt;
  return std::make_pair(std::stoi(idx), kind);
}

torch::Tensor radial_bin_index(int64_t h, int64_t w) {
  const int64_t extent = std::max(h, w);
  const int64_t nbins = extent / 2 + 1;
  auto idx = torch::empty({h * w}, torch::kLong);
  auto acc = idx.accessor<int64_t, 1>();
  for (int64_t i = 0; i < h; ++i) {
    const double fy = static_cast<double>(i <= h / 2 ? i : i - h) / h;
    for (int64_t j = 0; j < w; ++j) {
      const double fx = static_cast<double>(j <= w / 2 ? j : j - w) / w;
      const auto bin = static_cast<int64_t>(std::lround(std::sqrt(fx * fx + fy * fy) * extent));
      acc[i * w + j] = std::min(bin, nbins - 1);
    }
  }
  return idx;
}

}  // namespace

FeatureExtractorImpl::FeatureExtractorImpl(ExtractorConfig config) : config_(std::move(config)) {
  if (config_.native_resolution < kMinCroppableSize)
    throw std::invalid_argument("FeatureExtractor: native resolution below the minimum crop size");
  auto features = register_module("features", std::make_shared<torch::nn::Module>());
  int in = 3;
  torch::NoGradGuard no_grad;
  // Seeded init independent of the global torch generator.
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config_.seed);
  for (const auto& slot : kVggSlots) {
    const int out = scaled_width(kBlockWidth[slot.block], config_.width_scale);
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
    const double stddev = std::sqrt(2.0 / (in * 9));
    conv->weight.copy_(at::normal(0.0, stddev, conv->weight.sizes(), gen));
    conv->bias.zero_();
    features->register_module(std::to_string(slot.index), conv);
    convs_.push_back(conv);
    conv_index_.push_back(slot.index);
    in = out;
  }
  input_mean_ = register_buffer("input_mean", torch::zeros({1, 3, 1, 1}));
  input_std_ = register_buffer("input_std", torch::ones({1, 3, 1, 1}));
  for (auto& p : parameters()) p.set_requires_grad(false);
  if (!config_.weights_path.empty()) load_weights(config_.weights_path);
}

std::vector<int> FeatureExtractorImpl::layer_channels() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < convs_.size(); ++k)
    if (k == 0 || kVggSlots[k].block != kVggSlots[k - 1].block)
      out.push_back(static_cast<int>(convs_[k]->weight.size(0)));
  return out;
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "FeatureExtractor expects [N, 3, H, W]");
  std::vector<torch::Tensor> styles;
  auto x = (images - input_mean_) / input_std_;
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    const bool block_start = k == 0 || kVggSlots[k].block != kVggSlots[k - 1].block;
    if (block_start && k > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
    x = torch::relu(convs_[k]->forward(x));
    if (block_start) styles.push_back(x);
  }
  return styles;
}

void FeatureExtractorImpl::save_weights(const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : named_parameters()) archive.write(p.key(), p.value());
  for (const auto& b : named_buffers()) archive.write(b.key(), b.value(), /*is_buffer=*/true);
  archive.save_to(path.string());
}

void FeatureExtractorImpl::load_weights(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("feature extractor weights not found: '" + path.string() + "'");
  torch::NoGradGuard no_grad;
  // Archives written by save_weights carry their own normalization buffers.
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    for (auto& p : named_parameters()) {
      torch::Tensor t;
      archive.read(p.key(), t);
      if (!t.sizes().equals(p.value().sizes()))
        throw std::invalid_argument("extractor weights '" + path.string() + "' do not match width_scale");
      p.value().copy_(t);
    }
    for (auto& b : named_buffers()) {
      torch::Tensor t;
      archive.read(b.key(), t, /*is_buffer=*/true);
      b.value().copy_(t);
    }
    return;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    // Not a native archive; fall through to a TorchScript VGG module.
  }

  torch::jit::script::Module module;
  try {
    module = torch::jit::load(path.string());
  } catch (const std::exception& e) {
    throw IoError("cannot read feature extractor weights '" + path.string() + "': " + e.what());
  }
  std::size_t matched = 0;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    const auto parsed = parse_param_name(p.name);
    if (!parsed) continue;
    const auto it = std::find(conv_index_.begin(), conv_index_.end(), parsed->first);
    if (it == conv_index_.end()) continue;
    auto& conv = convs_[static_cast<std::size_t>(it - conv_index_.begin())];
    auto& dst = parsed->second == "weight" ? conv->weight : conv->bias;
    if (!dst.sizes().equals(p.value.sizes()))
      throw std::invalid_argument("extractor weights '" + path.string() + "' do not match width_scale");
    dst.copy_(p.value);
    ++matched;
  }
  if (matched != 2 * convs_.size())
    throw IoError("extractor weights '" + path.string() + "' are missing VGG-19 convolution layers");
  // Standard pretrained VGG expects ImageNet-normalized inputs.
  input_mean_.copy_(torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1}));
  input_std_.copy_(torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1}));
}

torch::Tensor gram(const torch::Tensor& features) {
  auto f = features.dim() == 3 ? features.unsqueeze(0) : features;
  TORCH_CHECK(f.dim() == 4, "gram expects [C, H, W] or [N, C, H, W]");
  const auto n = f.size(0), c = f.size(1), hw = f.size(2) * f.size(3);
  auto flat = f.reshape({n, c, hw});
  return torch::bmm(flat, flat.transpose(1, 2)) / static_cast<double>(hw);
}

torch::Tensor power_spectrum(const torch::Tensor& features) {
  auto f = features.dim() == 3 ? features.unsqueeze(0) : features;
  TORCH_CHECK(f.dim() == 4, "power_spectrum expects [C, H, W] or [N, C, H, W]");
  const auto n = f.size(0), c = f.size(1), h = f.size(2), w = f.size(3);
  TORCH_CHECK(h >= 4 && w >= 4, "power_spectrum needs maps of at least 4x4");
  auto spectrum = torch::fft::fft2(f, c10::nullopt, {-2, -1}, "ortho");
  auto power = (torch::real(spectrum).square() + torch::imag(spectrum).square()).reshape({n, c, h * w});
  const auto idx = radial_bin_index(h, w);
  const int64_t nbins = std::max(h, w) / 2 + 1;
  auto binned = torch::zeros({n, c, nbins}, power.options()).index_add(2, idx, power);
  return binned.mean(1);
}

torch::Tensor image_to_tensor(const Image& img) {
  return torch::from_blob(const_cast<float*>(img.data.data()), {img.channels, img.height, img.width}, torch::kFloat)
      .clone();
}

Image tensor_to_image(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat).contiguous();
  if (c.dim() == 4) c = c.squeeze(0);
  TORCH_CHECK(c.dim() == 3, "tensor_to_image expects [C, H, W]");
  Image img(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), static_cast<int>(c.size(2)));
  std::memcpy(img.data.data(), c.data_ptr<float>(), img.data.size() * sizeof(float));
  return img;
}

int crop_side(const CropSpec& crop, int image_width, int image_height, int native_resolution) {
  const int limit = std::min(image_width, image_height);
  const int side = static_cast<int>(std::lround(crop.scale * native_resolution));
  return std::clamp(side, std::min(kMinCroppableSize, limit), limit);
}

std::vector<CropSpec> sample_crops(int image_width, int image_height, int n, const TextureLossConfig& cfg,
                                   int native_resolution, Rng& rng) {
  std::vector<CropSpec> crops;
  crops.reserve(n);
  const double log_lo = std::log(cfg.scale_min), log_hi = std::log(cfg.scale_max);
  for (int k = 0; k < n; ++k) {
    CropSpec c;
    c.scale = std::exp(rng.uniform(log_lo, log_hi));
    const double half = 0.5 * crop_side(c, image_width, image_height, native_resolution);
    c.center_x = rng.uniform(half, image_width - half);
    c.center_y = rng.uniform(half, image_height - half);
    crops.push_back(c);
  }
  return crops;
}

torch::Tensor resample_crops(const torch::Tensor& image, const std::vector<CropSpec>& crops, int native_resolution) {
  TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "resample_crops expects [3, H, W]");
  const int h = static_cast<int>(image.size(1)), w = static_cast<int>(image.size(2));
  if (std::min(h, w) < kMinCroppableSize)
    throw std::invalid_argument("image smaller than the minimum croppable size of " +
                                std::to_string(kMinCroppableSize) + " pixels");
  // Affine grids in normalized [-1, 1] coordinates (align_corners = false).
  auto theta = torch::zeros({static_cast<int64_t>(crops.size()), 2, 3}, torch::kFloat);
  auto acc = theta.accessor<float, 3>();
  for (std::size_t k = 0; k < crops.size(); ++k) {
    const double side = crop_side(crops[k], w, h, native_resolution);
    const double half = 0.5 * side;
    const double cx = std::clamp(crops[k].center_x, half, w - half);
    const double cy = std::clamp(crops[k].center_y, half, h - half);
    acc[k][0][0] = static_cast<float>(side / w);
    acc[k][0][2] = static_cast<float>(2.0 * cx / w - 1.0);
    acc[k][1][1] = static_cast<float>(side / h);
    acc[k][1][2] = static_cast<float>(2.0 * cy / h - 1.0);
  }
  const auto n = static_cast<int64_t>(crops.size());
  auto grid = F::affine_grid(theta, {n, 3, native_resolution, native_resolution}, /*align_corners=*/false);
  auto batch = image.unsqueeze(0).expand({n, 3, h, w});
  return F::grid_sample(batch, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
}

std::vector<torch::Tensor> extract_patch(FeatureExtractor& extractor, const torch::Tensor& image,
                                         const CropSpec& crop) {
  return extractor->forward(resample_crops(image, {crop}, extractor->config().native_resolution));
}

TextureDescriptor describe(const std::vector<torch::Tensor>& features, bool with_spectrum) {
  TextureDescriptor d;
  for (const auto& f : features) {
    d.grams.push_back(gram(f));
    if (with_spectrum) d.spectra.push_back(power_spectrum(f));
  }
  return d;
}

torch::Tensor descriptor_l1(const TextureDescriptor& a, const TextureDescriptor& b, double spectrum_weight) {
  TORCH_CHECK(a.grams.size() == b.grams.size(), "descriptor layer count mismatch");
  torch::Tensor total;
  for (std::size_t k = 0; k < a.grams.size(); ++k) {
    auto term = (a.grams[k] - b.grams[k]).abs().flatten(1).mean(1);
    if (k < a.spectra.size() && k < b.spectra.size())
      term = term + spectrum_weight * (a.spectra[k] - b.spectra[k]).abs().mean(1);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor texture_distance(FeatureExtractor& extractor, const torch::Tensor& img_a, const torch::Tensor& img_b,
                               const TextureLossConfig& cfg, std::uint64_t seed) {
  if (cfg.n_crops < 1) throw std::invalid_argument("texture_distance: n_crops must be >= 1");
  if (!img_a.sizes().equals(img_b.sizes()))
    throw std::invalid_argument("texture_distance: images must have the same size");
  const int h = static_cast<int>(img_a.size(1)), w = static_cast<int>(img_a.size(2));
  if (std::min(h, w) < kMinCroppableSize)
    throw std::invalid_argument("image smaller than the minimum croppable size");
  Rng rng(seed);
  const int native = extractor->config().native_resolution;
  const auto crops = sample_crops(w, h, cfg.n_crops, cfg, native, rng);
  auto batch = torch::cat({resample_crops(img_a, crops, native), resample_crops(img_b, crops, native)}, 0);
  const auto features = extractor->forward(batch);
  std::vector<torch::Tensor> fa, fb;
  for (const auto& f : features) {
    auto halves = f.chunk(2, 0);
    fa.push_back(halves[0]);
    fb.push_back(halves[1]);
  }
  const auto da = describe(fa, cfg.fourier);
  const auto db = describe(fb, cfg.fourier);
  return descriptor_l1(da, db, cfg.spectrum_weight).mean();
}

double texture_distance(FeatureExtractor& extractor, const Image& a, const Image& b, const TextureLossConfig& cfg,
                        std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  return texture_distance(extractor, image_to_tensor(to_rgb(a)), image_to_tensor(to_rgb(b)), cfg, seed)
      .item<double>();
}

}  // namespace neuralmat
