#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "neuralmat/material_nets.hpp"
#include "tiny_model.hpp"

using namespace neuralmat;
using neuralmat::testing::tiny_model_config;

namespace {

DecoderConfig tiny_decoder() { return tiny_model_config().decoder; }

torch::Tensor field_noise(std::uint64_t seed, int w, int h, Int2 origin = {0, 0}) {
  return noise_to_tensor(NoiseField(seed).sample_crop(origin, {w, h}));
}

std::pair<torch::Tensor, torch::Tensor> measured_stats(const torch::Tensor& x) {
  return {x.mean({2, 3}), x.var({2, 3}, false).sqrt()};
}

}  // namespace

TEST(Adain, HitsRandomTargets) {
  torch::manual_seed(1);
  auto x = torch::randn({1, 4, 8, 8}, torch::kDouble) * 3 + 1;
  auto y = adain(x, torch::full({1, 4}, 2.0, torch::kDouble), torch::full({1, 4}, 0.5, torch::kDouble));
  auto [m, s] = measured_stats(y);
  EXPECT_LT((m - 2.0).abs().max().item<double>(), 1e-4);
  EXPECT_LT((s - 0.5).abs().max().item<double>(), 1e-4);
}

TEST(Adain, OwnStatsIsIdentityAndUnitTargetsStandardize) {
  torch::manual_seed(2);
  auto x = torch::randn({2, 3, 6, 6}, torch::kDouble) * 2 - 1;
  auto [m, s] = measured_stats(x);
  EXPECT_TRUE(torch::allclose(adain(x, m, s), x, 1e-5, 1e-5));
  auto y = adain(x, torch::zeros({2, 3}, torch::kDouble), torch::ones({2, 3}, torch::kDouble));
  auto [m2, s2] = measured_stats(y);
  EXPECT_LT(m2.abs().max().item<double>(), 1e-10);
  EXPECT_LT((s2 - 1).abs().max().item<double>(), 1e-5);
}

TEST(Adain, ConstantInputIsGuarded) {
  auto y = adain(torch::full({1, 2, 4, 4}, 3.0), torch::ones({1, 2}), torch::ones({1, 2}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  EXPECT_TRUE(torch::allclose(y, torch::ones_like(y)));
}

TEST(Reparameterize, SeededAndLimits) {
  auto mean = torch::tensor({{0.5, -1.0, 2.0}}, torch::kDouble);
  auto lv = torch::tensor({{0.0, 1.0, -2.0}}, torch::kDouble);
  EXPECT_TRUE(torch::equal(reparameterize(mean, lv, 4), reparameterize(mean, lv, 4)));
  EXPECT_FALSE(torch::equal(reparameterize(mean, lv, 4), reparameterize(mean, lv, 5)));
  auto collapsed = reparameterize(mean, torch::full_like(lv, -200.0), 9);
  EXPECT_TRUE(torch::allclose(collapsed, mean, 0, 1e-20));
}

TEST(Reparameterize, SampleVarianceMatches) {
  auto lv = torch::tensor({-1.0, 0.0, 0.7}, torch::kDouble);
  auto mean = torch::tensor({0.3, -0.2, 1.0}, torch::kDouble).expand({100000, 3}).contiguous();
  auto z = reparameterize(mean, lv.expand({100000, 3}).contiguous(), 17);
  auto var = z.var(0);
  for (int k = 0; k < 3; ++k) {
    const double expect = std::exp(lv[k].item<double>());
    EXPECT_NEAR(var[k].item<double>() / expect, 1.0, 0.02);
  }
}

TEST(StyleMap, AffineAtOriginAndLinearity) {
  torch::manual_seed(3);
  StyleMap sm(5, 4);
  auto zero = torch::zeros({1, 5});
  auto z = torch::randn({1, 5});
  auto a0 = sm->affine(zero), a1 = sm->affine(z), a2 = sm->affine(2 * z);
  EXPECT_EQ(a0.size(1), 8);
  EXPECT_TRUE(torch::allclose(a2 - a1, a1 - a0, 1e-5, 1e-6));
  auto [mean, std] = sm->forward(zero);
  EXPECT_TRUE(torch::allclose(mean, torch::zeros({1, 4})));
  // Identity statistics at z = 0: softplus(log(e - 1)) = 1.
  EXPECT_TRUE(torch::allclose(std, torch::ones({1, 4}), 1e-5, 1e-4));
  auto [m2, s2] = sm->forward(torch::randn({3, 5}) * 50);
  EXPECT_GT(s2.min().item<float>(), 0.0f);
}

TEST(Decoder, ShapeRangesAndDeterminism) {
  torch::manual_seed(4);
  Decoder dec(tiny_decoder());
  auto noise = field_noise(1, 48, 32);
  auto z = torch::randn({1, 8}) * 2;
  auto a = dec->forward(noise, z);
  auto b = dec->forward(noise, z);
  ASSERT_EQ(a.sizes(), (std::vector<int64_t>{1, 6, 32, 48}));
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_GE(a.slice(1, 0, 5).min().item<float>(), 0.0f);
  EXPECT_LE(a.slice(1, 0, 4).max().item<float>(), 1.0f);
  EXPECT_GE(a.select(1, kRoughness).min().item<float>(), kMinRoughness - 1e-6);
  EXPECT_LE(a.select(1, kHeight).abs().max().item<float>(), tiny_decoder().height_max);
  EXPECT_NO_THROW(maps_from_tensor(a).validate());
}

TEST(Decoder, DistinctCodesGiveDistinctMaps) {
  torch::manual_seed(5);
  Decoder dec(tiny_decoder());
  auto noise = field_noise(2, 32, 32);
  auto a = dec->forward(noise, torch::full({1, 8}, 3.0f));
  auto b = dec->forward(noise, torch::full({1, 8}, -3.0f));
  EXPECT_GT((a - b).abs().mean().item<float>(), 1e-3f);
}

TEST(Decoder, RejectsBadInputs) {
  Decoder dec(tiny_decoder());
  auto z = torch::zeros({1, 8});
  EXPECT_THROW(dec->forward(field_noise(1, 40, 32), z), std::invalid_argument);
  EXPECT_THROW(dec->forward(torch::zeros({1, 3, 32, 32}), z), std::invalid_argument);
  EXPECT_THROW(dec->forward(field_noise(1, 32, 32), torch::zeros({1, 7})), std::invalid_argument);
  EXPECT_THROW(dec->forward(field_noise(1, 32, 32), z, StatsMode::Reference, nullptr), std::invalid_argument);
  EXPECT_THROW(Decoder(DecoderConfig{8, 8, {8, 8, 8}}), std::invalid_argument);
}

TEST(Decoder, OutputLayerHitsStyleTargets) {
  // Invert the squashing to recover the last conditioned layer in double precision.
  torch::manual_seed(6);
  Decoder dec(tiny_decoder());
  dec->to(torch::kDouble);
  auto noise = field_noise(3, 64, 64).to(torch::kDouble);
  auto z = torch::randn({1, 8}, torch::kDouble);
  auto maps = dec->forward(noise, z);
  const double hmax = tiny_decoder().height_max;
  auto logit = [](const torch::Tensor& p) { return torch::log(p / (1 - p)); };
  auto pre = torch::cat({logit(maps.slice(1, 0, 4)),
                         logit((maps.slice(1, 4, 5) - kMinRoughness) / (1 - kMinRoughness)),
                         torch::atanh(maps.slice(1, 5, 6) / hmax)},
                        1);
  auto [target_mean, target_std] = dec->style_params(z, dec->conditioned_layers() - 1);
  auto [m, s] = measured_stats(pre);
  EXPECT_LT((m - target_mean).abs().max().item<double>(), 1e-4);
  EXPECT_LT((s - target_std).abs().max().item<double>(), 1e-4);
}

TEST(Decoder, ReferenceModeWithOwnStatsMatchesPerCrop) {
  torch::manual_seed(7);
  Decoder dec(tiny_decoder());
  auto noise = field_noise(4, 32, 32);
  auto z = torch::randn({1, 8});
  AdainStats rec;
  auto a = dec->forward(noise, z, StatsMode::PerCrop, nullptr, &rec);
  EXPECT_EQ(static_cast<int>(rec.mean.size()), dec->conditioned_layers());
  auto b = dec->forward(noise, z, StatsMode::Reference, &rec);
  EXPECT_TRUE(torch::allclose(a, b, 1e-5, 1e-6));
}

TEST(Decoder, PerCropStatsDependOnCropButReferenceDoesNot) {
  torch::manual_seed(8);
  Decoder dec(tiny_decoder());
  auto z = torch::randn({1, 8});
  NoiseField field(5);
  AdainStats ref;
  dec->forward(noise_to_tensor(field.sample_crop({0, 0}, {128, 128})), z, StatsMode::PerCrop, nullptr, &ref);
  // Both crops extend more than the decoder reach (76 px) beyond the compared centre.
  auto big = dec->forward(noise_to_tensor(field.sample_crop({-64, -64}, {320, 320})), z, StatsMode::Reference, &ref);
  auto small = dec->forward(noise_to_tensor(field.sample_crop({0, 0}, {192, 192})), z, StatsMode::Reference, &ref);
  auto small_pc = dec->forward(noise_to_tensor(field.sample_crop({0, 0}, {192, 192})), z);
  auto centre_big = big.slice(2, 64 + 80, 64 + 112).slice(3, 64 + 80, 64 + 112);
  auto centre_small = small.slice(2, 80, 112).slice(3, 80, 112);
  auto centre_pc = small_pc.slice(2, 80, 112).slice(3, 80, 112);
  EXPECT_LT((centre_big - centre_small).abs().max().item<float>(), 1e-5f);
  EXPECT_GT((centre_big - centre_pc).abs().max().item<float>(), 1e-4f);
}

TEST(Decoder, DecoderOnlyAblationHasFewerParameters) {
  auto with = tiny_decoder();
  auto without = with;
  without.skip_connections = false;
  Decoder a(with), b(without);
  auto count = [](Decoder& d) {
    int64_t n = 0;
    for (const auto& p : d->parameters()) n += p.numel();
    return n;
  };
  EXPECT_LT(count(b), count(a));
  EXPECT_EQ(b->forward(field_noise(1, 32, 32), torch::zeros({1, 8})).size(1), 6);
}

TEST(Decoder, DefaultWidthsStayUnderTenMillionParameters) {
  Decoder d(DecoderConfig{});
  int64_t n = 0;
  for (const auto& p : d->parameters()) n += p.numel();
  EXPECT_LT(n, 10'000'000);
}

TEST(Decoder, CloneIsIndependent) {
  torch::manual_seed(9);
  Decoder a(tiny_decoder());
  auto b = clone_decoder(a);
  auto noise = field_noise(6, 32, 32);
  auto z = torch::randn({1, 8});
  EXPECT_TRUE(torch::equal(a->forward(noise, z), b->forward(noise, z)));
  {
    torch::NoGradGuard ng;
    for (auto& p : b->parameters()) p.add_(0.1);
  }
  EXPECT_FALSE(torch::equal(a->forward(noise, z), b->forward(noise, z)));
}

TEST(Encoder, OutputsAndBounds) {
  torch::manual_seed(10);
  const auto cfg = tiny_model_config().encoder;
  Encoder enc(cfg);
  enc->eval();
  auto img = torch::rand({2, 3, cfg.input_height, cfg.input_width});
  auto out = enc->forward(img);
  EXPECT_EQ(out.mean.sizes(), (std::vector<int64_t>{2, 8}));
  EXPECT_EQ(out.log_variance.sizes(), (std::vector<int64_t>{2, 8}));
  EXPECT_EQ(out.angles.sizes(), (std::vector<int64_t>{2, 2}));
  EXPECT_LT(out.angles.abs().max().item<float>(), std::numbers::pi / 4);
  auto again = enc->forward(img);
  EXPECT_TRUE(torch::equal(out.mean, again.mean));
  EXPECT_FALSE(torch::equal(out.mean[0], out.mean[1]));
  EXPECT_TRUE(torch::isfinite(out.mean).all().item<bool>());
}

TEST(Encoder, RejectsWrongResolution) {
  const auto cfg = tiny_model_config().encoder;
  Encoder enc(cfg);
  EXPECT_THROW(enc->forward(torch::rand({1, 3, cfg.input_height, cfg.input_width + 2})), std::invalid_argument);
  EXPECT_THROW(enc->forward(torch::rand({1, 1, cfg.input_height, cfg.input_width})), std::invalid_argument);
}

TEST(Encoder, FiftyLayerDefault) {
  // 1 stem conv + 3 per bottleneck over (3, 4, 6, 3) blocks + the posterior head.
  EncoderConfig cfg;
  int blocks = 0;
  for (int b : cfg.blocks) blocks += b;
  EXPECT_EQ(1 + 3 * blocks + 1, 50);
}

TEST(NoiseTensor, LayoutMatchesCrop) {
  const auto crop = NoiseField(3, 4).sample_crop({5, 6}, {7, 3});
  auto t = noise_to_tensor(crop);
  ASSERT_EQ(t.sizes(), (std::vector<int64_t>{1, 4, 3, 7}));
  EXPECT_EQ(t[0][2][1][4].item<float>(), crop.at(2, 1, 4));
}
