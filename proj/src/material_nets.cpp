#include "neuralmat/material_nets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace neuralmat {

namespace F = torch::nn::functional;

torch::Tensor adain_with_stats(const torch::Tensor& x, const torch::Tensor& feature_mean,
                               const torch::Tensor& feature_std, const torch::Tensor& target_mean,
                               const torch::Tensor& target_std) {
  auto expand = [](const torch::Tensor& t) { return t.unsqueeze(-1).unsqueeze(-1); };
  return expand(target_std) * (x - expand(feature_mean)) / expand(feature_std) + expand(target_mean);
}

namespace {

std::pair<torch::Tensor, torch::Tensor> instance_stats(const torch::Tensor& x) {
  auto mean = x.mean({2, 3});
  auto var = x.var({2, 3}, /*unbiased=*/false);
  return {mean, torch::sqrt(var + kAdainEpsilon)};
}

}  // namespace

torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& target_mean, const torch::Tensor& target_std) {
  TORCH_CHECK(x.dim() == 4, "adain expects [N, C, H, W]");
  auto [mean, std] = instance_stats(x);
  return adain_with_stats(x, mean, std, target_mean, target_std);
}

torch::Tensor reparameterize(const torch::Tensor& mean, const torch::Tensor& log_variance, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto eps = at::randn(mean.sizes(), gen, mean.options());
  return mean + torch::exp(0.5 * log_variance) * eps;
}

StyleMapImpl::StyleMapImpl(int latent_dim, int channels) : channels_(channels) {
  linear_ = register_module("linear", torch::nn::Linear(latent_dim, 2 * channels));
  torch::NoGradGuard no_grad;
  linear_->weight.mul_(0.1);
  // Start near identity statistics: mean 0, softplus(b) = 1.
  linear_->bias.slice(0, 0, channels).zero_();
  linear_->bias.slice(0, channels, 2 * channels).fill_(std::log(std::exp(1.0) - 1.0));
}

torch::Tensor StyleMapImpl::affine(const torch::Tensor& z) { return linear_->forward(z); }

std::pair<torch::Tensor, torch::Tensor> StyleMapImpl::forward(const torch::Tensor& z) {
  auto raw = affine(z);
  auto mean = raw.slice(1, 0, channels_);
  auto std = F::softplus(raw.slice(1, channels_, 2 * channels_)) + kAdainEpsilon;
  return {mean, std};
}

DecoderImpl::DecoderImpl(DecoderConfig config) : config_(std::move(config)) {
  if (config_.widths.size() != kLevels) throw std::invalid_argument("Decoder: need five level widths");
  const auto& w = config_.widths;
  auto conv3 = [](int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)); };
  for (int k = 0; k < kLevels; ++k) {
    const int in = k == 0 ? config_.noise_channels : w[k - 1];
    down_.push_back(register_module("down" + std::to_string(k), conv3(in, w[k])));
    styles_.push_back(register_module("style_down" + std::to_string(k), StyleMap(config_.latent_dim, w[k])));
  }
  for (int k = kLevels - 2; k >= 0; --k) {
    const int in = w[k + 1] + (config_.skip_connections ? w[k] : 0);
    up_.push_back(register_module("up" + std::to_string(k), conv3(in, w[k])));
    styles_.push_back(register_module("style_up" + std::to_string(k), StyleMap(config_.latent_dim, w[k])));
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[0], kMapChannels, 1)));
  styles_.push_back(register_module("style_out", StyleMap(config_.latent_dim, kMapChannels)));
}

torch::Tensor DecoderImpl::condition(const torch::Tensor& x, const torch::Tensor& z, int layer, StatsMode mode,
                                     const AdainStats* reference, AdainStats* record) {
  auto [target_mean, target_std] = styles_[layer]->forward(z);
  torch::Tensor mean, std;
  if (mode == StatsMode::Reference) {
    if (!reference || static_cast<int>(reference->mean.size()) <= layer)
      throw std::invalid_argument("Decoder: reference statistics missing for layer " + std::to_string(layer));
    mean = reference->mean[layer];
    std = reference->std[layer];
  } else {
    std::tie(mean, std) = instance_stats(x);
  }
  if (record) {
    record->mean.push_back(mean.detach().mean(0, /*keepdim=*/true));
    record->std.push_back(std.detach().mean(0, /*keepdim=*/true));
  }
  return adain_with_stats(x, mean, std, target_mean, target_std);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& noise, const torch::Tensor& z, StatsMode mode,
                                   const AdainStats* reference, AdainStats* record) {
  if (noise.dim() != 4 || noise.size(1) != config_.noise_channels)
    throw std::invalid_argument("Decoder: noise must be [N, " + std::to_string(config_.noise_channels) + ", H, W]");
  if (noise.size(2) % kSizeMultiple != 0 || noise.size(3) % kSizeMultiple != 0)
    throw std::invalid_argument("Decoder: noise height and width must be multiples of 16");
  if (z.dim() != 2 || z.size(1) != config_.latent_dim || z.size(0) != noise.size(0))
    throw std::invalid_argument("Decoder: latent code must be [N, " + std::to_string(config_.latent_dim) + "]");
  if (record) *record = {};

  int layer = 0;
  std::vector<torch::Tensor> skips;
  auto x = noise;
  for (int k = 0; k < kLevels; ++k) {
    if (k > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
    x = condition(torch::relu(down_[k]->forward(x)), z, layer++, mode, reference, record);
    skips.push_back(x);
  }
  for (int u = 0; u < kLevels - 1; ++u) {
    const int k = kLevels - 2 - u;
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skips[k].size(2), skips[k].size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    if (config_.skip_connections) x = torch::cat({x, skips[k]}, 1);
    x = condition(torch::relu(up_[u]->forward(x)), z, layer++, mode, reference, record);
  }
  x = condition(out_->forward(x), z, layer++, mode, reference, record);

  const double hmax = config_.height_max;
  auto diffuse = torch::sigmoid(x.slice(1, kDiffuseR, kSpecular));
  auto specular = torch::sigmoid(x.slice(1, kSpecular, kRoughness));
  auto roughness = kMinRoughness + (1.0 - kMinRoughness) * torch::sigmoid(x.slice(1, kRoughness, kHeight));
  auto height = hmax * torch::tanh(x.slice(1, kHeight, kMapChannels));
  return torch::cat({diffuse, specular, roughness, height}, 1);
}

Decoder clone_decoder(const Decoder& decoder) {
  Decoder copy(decoder->config());
  torch::NoGradGuard no_grad;
  auto src = decoder->named_parameters();
  for (auto& p : copy->named_parameters()) p.value().copy_(src[p.key()]);
  auto src_buffers = decoder->named_buffers();
  for (auto& b : copy->named_buffers()) b.value().copy_(src_buffers[b.key()]);
  copy->train(decoder->is_training());
  return copy;
}

BottleneckImpl::BottleneckImpl(int in, int width, int stride) {
  const int out = 4 * width;
  c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 1).bias(false)));
  b1_ = register_module("b1", torch::nn::BatchNorm2d(width));
  c2_ = register_module(
      "c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).stride(stride).padding(1).bias(false)));
  b2_ = register_module("b2", torch::nn::BatchNorm2d(width));
  c3_ = register_module("c3", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, out, 1).bias(false)));
  b3_ = register_module("b3", torch::nn::BatchNorm2d(out));
  if (stride != 1 || in != out)
    shortcut_ = register_module(
        "shortcut", torch::nn::Sequential(
                        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                        torch::nn::BatchNorm2d(out)));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(b1_->forward(c1_->forward(x)));
  y = torch::relu(b2_->forward(c2_->forward(y)));
  y = b3_->forward(c3_->forward(y));
  return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
}

EncoderImpl::EncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  if (config_.blocks.empty()) throw std::invalid_argument("Encoder: need at least one stage");
  const int base = config_.base_width;
  stem_ = register_module(
      "stem", torch::nn::Sequential(
                  torch::nn::Conv2d(torch::nn::Conv2dOptions(3, base, 7).stride(2).padding(3).bias(false)),
                  torch::nn::BatchNorm2d(base), torch::nn::ReLU(),
                  torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));
  stages_ = register_module("stages", torch::nn::Sequential());
  int in = base;
  for (std::size_t s = 0; s < config_.blocks.size(); ++s) {
    const int width = base << s;
    for (int b = 0; b < config_.blocks[s]; ++b) {
      stages_->push_back(Bottleneck(in, width, (b == 0 && s > 0) ? 2 : 1));
      in = 4 * width;
    }
  }
  posterior_ = register_module("posterior", torch::nn::Linear(in, 2 * config_.latent_dim));
  alignment_ = register_module("alignment", torch::nn::Linear(in, 2));
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.input_height ||
      images.size(3) != config_.input_width)
    throw std::invalid_argument("Encoder: expected [N, 3, " + std::to_string(config_.input_height) + ", " +
                                std::to_string(config_.input_width) + "] input (resize before encoding)");
  auto x = stages_->forward(stem_->forward((images - 0.5) / 0.25));
  x = x.mean({2, 3});
  auto post = posterior_->forward(x);
  const int d = config_.latent_dim;
  EncoderOutput out;
  out.mean = post.slice(1, 0, d);
  out.log_variance = post.slice(1, d, 2 * d);
  out.angles = 0.25 * std::numbers::pi * torch::tanh(alignment_->forward(x));
  return out;
}

torch::Tensor noise_to_tensor(const NoiseCrop& crop) {
  return torch::from_blob(const_cast<float*>(crop.data.data()), {1, crop.channels, crop.height, crop.width},
                          torch::kFloat)
      .clone();
}

MaterialMaps maps_from_tensor(const torch::Tensor& maps) {
  auto t = maps.detach().to(torch::kDouble).contiguous();
  if (t.dim() == 4) t = t.squeeze(0);
  TORCH_CHECK(t.dim() == 3 && t.size(0) == kMapChannels, "maps_from_tensor expects [6, H, W]");
  MaterialMaps m;
  m.height = static_cast<int>(t.size(1));
  m.width = static_cast<int>(t.size(2));
  const std::size_t n = m.pixels();
  const double* p = t.data_ptr<double>();
  auto clamp_copy = [&](int first, int count, double lo, double hi) {
    std::vector<double> v(p + first * n, p + (first + count) * n);
    for (double& x : v) x = std::clamp(x, lo, hi);
    return v;
  };
  m.diffuse = clamp_copy(kDiffuseR, 3, 0.0, 1.0);
  m.specular = clamp_copy(kSpecular, 1, 0.0, 1.0);
  m.roughness = clamp_copy(kRoughness, 1, kMinRoughness, 1.0);
  m.height_map.assign(p + kHeight * n, p + (kHeight + 1) * n);
  return m;
}

torch::Tensor maps_to_tensor(const MaterialMaps& maps) {
  const std::size_t n = maps.pixels();
  auto t = torch::empty({kMapChannels, maps.height, maps.width}, torch::kDouble);
  double* p = t.data_ptr<double>();
  std::copy(maps.diffuse.begin(), maps.diffuse.end(), p);
  std::copy(maps.specular.begin(), maps.specular.end(), p + kSpecular * n);
  std::copy(maps.roughness.begin(), maps.roughness.end(), p + kRoughness * n);
  std::copy(maps.height_map.begin(), maps.height_map.end(), p + kHeight * n);
  return t.to(torch::kFloat);
}

}  // namespace neuralmat
