#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "neuralmat/feature_stats.hpp"

using namespace neuralmat;

namespace {

FeatureExtractor small_extractor(std::uint64_t seed = 0) {
  ExtractorConfig c;
  c.width_scale = 0.125;
  c.native_resolution = 64;
  c.seed = seed;
  return FeatureExtractor(c);
}

Image noise_image(int w, int h, std::uint64_t seed) {
  torch::manual_seed(seed);
  return tensor_to_image(torch::rand({3, h, w}));
}

Image gray_image(int w, int h, float v = 0.5f) { return Image(3, h, w, v); }

}  // namespace

TEST(Gram, HandComputed) {
  auto f = torch::tensor({1.0f, 2.0f, 3.0f, 4.0f, 0.0f, 1.0f, 0.0f, 1.0f}).reshape({2, 2, 2});
  auto g = gram(f);
  ASSERT_EQ(g.sizes(), (std::vector<int64_t>{1, 2, 2}));
  EXPECT_FLOAT_EQ(g[0][0][0].item<float>(), (1 + 4 + 9 + 16) / 4.0f);
  EXPECT_FLOAT_EQ(g[0][0][1].item<float>(), (2 + 4) / 4.0f);
  EXPECT_FLOAT_EQ(g[0][1][0].item<float>(), (2 + 4) / 4.0f);
  EXPECT_FLOAT_EQ(g[0][1][1].item<float>(), 2 / 4.0f);
}

TEST(Gram, ZeroAndConstant) {
  EXPECT_EQ(gram(torch::zeros({3, 5, 5})).abs().sum().item<float>(), 0.0f);
  EXPECT_FLOAT_EQ(gram(torch::full({1, 4, 7}, 3.0f))[0][0][0].item<float>(), 9.0f);
}

TEST(Gram, PermutationInvariantSymmetricPsd) {
  torch::manual_seed(1);
  auto f = torch::randn({6, 8, 8});
  auto perm = torch::randperm(64);
  auto shuffled = f.reshape({6, 64}).index_select(1, perm).reshape({6, 8, 8});
  auto g = gram(f)[0];
  EXPECT_TRUE(torch::allclose(g, gram(shuffled)[0], 1e-5, 1e-6));
  EXPECT_TRUE(torch::allclose(g, g.t()));
  auto eig = torch::linalg_eigvalsh(g.to(torch::kDouble), "L");
  EXPECT_GE(eig.min().item<double>(), -1e-9);
}

TEST(PowerSpectrum, ConstantIsAllDc) {
  auto s = power_spectrum(torch::full({2, 8, 8}, 1.5f))[0];
  EXPECT_NEAR(s[0].item<float>(), 1.5f * 1.5f * 64, 1e-3);
  EXPECT_NEAR(s.slice(0, 1).abs().sum().item<float>(), 0.0f, 1e-4);
}

TEST(PowerSpectrum, ParsevalAndNonNegative) {
  torch::manual_seed(2);
  auto f = torch::randn({4, 12, 10}, torch::kDouble);
  auto s = power_spectrum(f)[0];
  EXPECT_GE(s.min().item<double>(), 0.0);
  const double energy = f.square().sum({1, 2}).mean().item<double>();
  EXPECT_NEAR(s.sum().item<double>(), energy, 1e-9 * energy);
}

TEST(PowerSpectrum, CircularShiftInvariant) {
  torch::manual_seed(3);
  auto f = torch::randn({3, 16, 16}, torch::kDouble);
  auto shifted = torch::roll(f, {5, -3}, {1, 2});
  EXPECT_TRUE(torch::allclose(power_spectrum(f), power_spectrum(shifted), 1e-10, 1e-10));
}

TEST(PowerSpectrum, RejectsTinyMaps) { EXPECT_ANY_THROW(power_spectrum(torch::zeros({1, 3, 8}))); }

TEST(Extractor, LayerChannelsFollowScale) {
  auto e = small_extractor();
  EXPECT_EQ(e->layer_channels(), (std::vector<int>{8, 16, 32, 64, 64}));
  auto feats = e->forward(torch::rand({2, 3, 64, 64}));
  ASSERT_EQ(feats.size(), 5u);
  EXPECT_EQ(feats[0].sizes(), (std::vector<int64_t>{2, 8, 64, 64}));
  EXPECT_EQ(feats[4].sizes(), (std::vector<int64_t>{2, 64, 4, 4}));
}

TEST(Extractor, SeededInitIsReproducible) {
  auto a = small_extractor(5), b = small_extractor(5), c = small_extractor(6);
  auto x = torch::rand({1, 3, 64, 64});
  EXPECT_TRUE(torch::equal(a->forward(x)[2], b->forward(x)[2]));
  EXPECT_FALSE(torch::equal(a->forward(x)[2], c->forward(x)[2]));
}

TEST(Extractor, WeightsRoundTrip) {
  auto a = small_extractor(9);
  const auto path = std::filesystem::temp_directory_path() / "nm_extractor_roundtrip.pt";
  a->save_weights(path);
  auto b = small_extractor(1);
  b->load_weights(path);
  auto x = torch::rand({1, 3, 64, 64});
  EXPECT_TRUE(torch::equal(a->forward(x)[4], b->forward(x)[4]));
  ExtractorConfig wrong;
  wrong.width_scale = 0.25;
  wrong.native_resolution = 64;
  FeatureExtractor c(wrong);
  EXPECT_THROW(c->load_weights(path), std::invalid_argument);
  EXPECT_THROW(c->load_weights("/nonexistent/weights.pt"), IoError);
  std::filesystem::remove(path);
}

TEST(ExtractPatch, ZeroImageGivesZeroFirstLayer) {
  auto e = small_extractor();
  auto f = extract_patch(e, torch::zeros({3, 80, 80}), {40, 40, 1.0});
  EXPECT_EQ(f[0].abs().sum().item<float>(), 0.0f);
  EXPECT_EQ(gram(f[0]).abs().sum().item<float>(), 0.0f);
}

TEST(ExtractPatch, DeterministicAndBypassAtNativeScale) {
  auto e = small_extractor();
  auto img = image_to_tensor(noise_image(64, 64, 4));
  auto a = extract_patch(e, img, {32, 32, 1.0});
  auto b = extract_patch(e, img, {32, 32, 1.0});
  auto direct = e->forward(img.unsqueeze(0));
  for (int k = 0; k < 5; ++k) {
    EXPECT_TRUE(torch::equal(a[k], b[k]));
    EXPECT_TRUE(torch::allclose(a[k], direct[k], 1e-4, 1e-5)) << k;
  }
}

TEST(ExtractPatch, RejectsTinyImage) {
  auto e = small_extractor();
  EXPECT_THROW(extract_patch(e, torch::zeros({3, 8, 32}), {16, 4, 1.0}), std::invalid_argument);
}

TEST(Crops, ScalesAndCentresInRange) {
  Rng rng(7);
  TextureLossConfig cfg;
  const auto crops = sample_crops(300, 200, 2000, cfg, 64, rng);
  double log_sum = 0;
  for (const auto& c : crops) {
    EXPECT_GE(c.scale, cfg.scale_min);
    EXPECT_LE(c.scale, cfg.scale_max);
    const double half = 0.5 * crop_side(c, 300, 200, 64);
    EXPECT_GE(c.center_x, half);
    EXPECT_LE(c.center_x, 300 - half);
    EXPECT_GE(c.center_y, half);
    EXPECT_LE(c.center_y, 200 - half);
    log_sum += std::log(c.scale);
  }
  // Log-uniform: mean log scale is the midpoint of the log range.
  const double mid = 0.5 * (std::log(cfg.scale_min) + std::log(cfg.scale_max));
  EXPECT_NEAR(log_sum / crops.size(), mid, 0.1);
}

TEST(Crops, SideIsClampedToImage) {
  EXPECT_EQ(crop_side({0, 0, 8.0}, 300, 200, 64), 200);
  EXPECT_EQ(crop_side({0, 0, 0.1}, 300, 200, 64), kMinCroppableSize);
  EXPECT_EQ(crop_side({0, 0, 1.0}, 300, 200, 64), 64);
}

TEST(TextureDistance, ZeroOnIdenticalAndSymmetric) {
  auto e = small_extractor();
  const auto a = noise_image(96, 80, 1), b = noise_image(96, 80, 2);
  TextureLossConfig cfg;
  EXPECT_EQ(texture_distance(e, a, a, cfg, 3), 0.0);
  const double ab = texture_distance(e, a, b, cfg, 3);
  EXPECT_GT(ab, 0.0);
  EXPECT_NEAR(ab, texture_distance(e, b, a, cfg, 3), 1e-6 * ab);
  EXPECT_EQ(ab, texture_distance(e, a, b, cfg, 3));
}

TEST(TextureDistance, NoiseVsGrayExceedsNoiseVsNoise) {
  auto e = small_extractor();
  const auto n1 = noise_image(96, 96, 11), n2 = noise_image(96, 96, 12);
  const auto g = gray_image(96, 96);
  TextureLossConfig cfg;
  cfg.n_crops = 8;
  const double ng = texture_distance(e, n1, g, cfg, 5);
  const double nn = texture_distance(e, n1, n2, cfg, 5);
  EXPECT_GT(ng, 0.0);
  EXPECT_GT(ng, nn);
}

TEST(TextureDistance, FullCropSingleScaleReducesToDescriptorL1) {
  auto e = small_extractor();
  const auto a = noise_image(64, 64, 21), b = noise_image(64, 64, 22);
  TextureLossConfig cfg;
  cfg.n_crops = 1;
  cfg.scale_min = cfg.scale_max = 1.0;
  auto ta = image_to_tensor(a), tb = image_to_tensor(b);
  torch::NoGradGuard ng;
  const auto da = describe(e->forward(ta.unsqueeze(0)), true);
  const auto db = describe(e->forward(tb.unsqueeze(0)), true);
  const double direct = descriptor_l1(da, db, cfg.spectrum_weight).item<double>();
  EXPECT_NEAR(texture_distance(e, a, b, cfg, 0), direct, 1e-4 * direct);
}

TEST(TextureDistance, FourierSwitchDropsSpectrum) {
  auto e = small_extractor();
  const auto a = noise_image(64, 64, 31), b = gray_image(64, 64);
  TextureLossConfig on, off;
  off.fourier = false;
  on.spectrum_weight = 1.0;
  EXPECT_GT(texture_distance(e, a, b, on, 1), texture_distance(e, a, b, off, 1));
}

TEST(TextureDistance, DifferentiableInBothImages) {
  auto e = small_extractor();
  auto a = image_to_tensor(noise_image(64, 64, 41)).requires_grad_(true);
  auto b = image_to_tensor(noise_image(64, 64, 42)).requires_grad_(true);
  texture_distance(e, a, b, {}, 2).backward();
  EXPECT_GT(a.grad().abs().sum().item<float>(), 0.0f);
  EXPECT_GT(b.grad().abs().sum().item<float>(), 0.0f);
}

TEST(TextureDistance, Errors) {
  auto e = small_extractor();
  TextureLossConfig cfg;
  cfg.n_crops = 0;
  EXPECT_THROW(texture_distance(e, gray_image(32, 32), gray_image(32, 32), cfg, 0), std::invalid_argument);
  EXPECT_THROW(texture_distance(e, gray_image(32, 32), gray_image(32, 48), {}, 0), std::invalid_argument);
  EXPECT_THROW(texture_distance(e, gray_image(8, 8), gray_image(8, 8), {}, 0), std::invalid_argument);
}
