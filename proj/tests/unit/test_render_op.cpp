#include <gtest/gtest.h>

#include "neuralmat/material_nets.hpp"
#include "neuralmat/render_op.hpp"
#include "neuralmat/rng.hpp"

using namespace neuralmat;

namespace {

torch::Tensor random_map_tensor(int n, int h, int w, std::uint64_t seed) {
  torch::manual_seed(seed);
  auto t = torch::rand({n, kMapChannels, h, w}, torch::kDouble) * 0.8 + 0.1;
  t.select(1, kHeight).mul_(0.5).sub_(0.25);
  return t;
}

}  // namespace

TEST(RenderMaps, ForwardMatchesShade) {
  auto maps = random_map_tensor(2, 8, 12, 1).to(torch::kFloat);
  const auto out = render_maps(maps, torch::Tensor(), {});
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{2, 3, 8, 12}));
  for (int i = 0; i < 2; ++i) {
    const auto r = shade(maps_from_tensor(maps[i]), {});
    auto ref = torch::from_blob(const_cast<double*>(r.radiance.data()), {3, 8, 12}, torch::kDouble).to(torch::kFloat);
    EXPECT_TRUE(torch::equal(out[i], ref));
  }
}

TEST(RenderMaps, AnglesRotateGeometry) {
  auto maps = random_map_tensor(1, 8, 8, 2).to(torch::kFloat);
  auto angles = torch::tensor({{0.2f, -0.1f}});
  const auto out = render_maps(maps, angles, {});
  CaptureGeometry g;
  g.rotation_h = 0.2f;
  g.rotation_v = -0.1f;
  const auto r = shade(maps_from_tensor(maps[0]), g);
  auto ref = torch::from_blob(const_cast<double*>(r.radiance.data()), {3, 8, 8}, torch::kDouble).to(torch::kFloat);
  EXPECT_TRUE(torch::allclose(out[0], ref, 1e-6, 1e-7));
}

TEST(RenderMaps, BackwardMatchesShadeGradient) {
  auto maps = random_map_tensor(1, 8, 8, 3).requires_grad_(true);
  torch::manual_seed(9);
  // The op outputs float32, so the upstream it sees is float-rounded.
  auto up = torch::randn({1, 3, 8, 8}).to(torch::kDouble);
  auto out = render_maps(maps, torch::Tensor(), {});
  (out.to(torch::kDouble) * up).sum().backward();
  const auto m = maps_from_tensor(maps.detach()[0]);
  auto up_c = up[0].contiguous();
  const auto g = shade_gradient(m, {}, {up_c.data_ptr<double>(), 192});
  auto grad = maps.grad()[0];
  for (int k = 0; k < 64; ++k) {
    const int i = k / 8, j = k % 8;
    EXPECT_NEAR(grad[kDiffuseG][i][j].item<double>(), g.diffuse[64 + k], 1e-12);
    EXPECT_NEAR(grad[kSpecular][i][j].item<double>(), g.specular[k], 1e-12);
    EXPECT_NEAR(grad[kRoughness][i][j].item<double>(), g.roughness[k], 1e-12);
    EXPECT_NEAR(grad[kHeight][i][j].item<double>(), g.height_map[k], 1e-12);
  }
}

TEST(RenderMaps, AngleGradientMatchesFiniteDifference) {
  auto maps = random_map_tensor(1, 8, 8, 4);
  auto angles = torch::tensor({{0.1, 0.05}}, torch::kDouble).requires_grad_(true);
  torch::manual_seed(5);
  // The op outputs float32, so the upstream it sees is float-rounded.
  auto up = torch::randn({1, 3, 8, 8}).to(torch::kDouble);
  (render_maps(maps, angles, {}).to(torch::kDouble) * up).sum().backward();
  auto f = [&](double h, double v) {
    CaptureGeometry g;
    g.rotation_h = h;
    g.rotation_v = v;
    const auto r = shade(maps_from_tensor(maps[0]), g);
    auto u = up[0].contiguous();
    double s = 0;
    for (int k = 0; k < 192; ++k) s += r.radiance[k] * u.data_ptr<double>()[k];
    return s;
  };
  const double e = 1e-5;
  const double dh = (f(0.1 + e, 0.05) - f(0.1 - e, 0.05)) / (2 * e);
  const double dv = (f(0.1, 0.05 + e) - f(0.1, 0.05 - e)) / (2 * e);
  EXPECT_NEAR(angles.grad()[0][0].item<double>(), dh, 1e-4 * std::max(1.0, std::abs(dh)));
  EXPECT_NEAR(angles.grad()[0][1].item<double>(), dv, 1e-4 * std::max(1.0, std::abs(dv)));
}

TEST(RenderMaps, RejectsBadShapes) {
  EXPECT_THROW(render_maps(torch::rand({1, 5, 8, 8}), torch::Tensor(), {}), std::invalid_argument);
  EXPECT_THROW(render_maps(torch::rand({1, 6, 8, 8}), torch::zeros({2, 2}), {}), std::invalid_argument);
}

TEST(SrgbEncodeTensor, ClampsAndMatchesScalar) {
  auto x = torch::tensor({-1.0f, 0.0f, 0.25f, 0.5f, 1.0f, 3.0f});
  auto y = srgb_encode(x);
  EXPECT_NEAR(y[2].item<float>(), srgb_encode(0.25f), 1e-6);
  EXPECT_NEAR(y[3].item<float>(), std::pow(0.5f, 1.0f / 2.2f), 1e-6);
  EXPECT_FLOAT_EQ(y[4].item<float>(), 1.0f);
  EXPECT_FLOAT_EQ(y[5].item<float>(), 1.0f);
  EXPECT_LT(y[0].item<float>(), 1e-3f);
  auto z = torch::tensor({0.3f}).requires_grad_(true);
  srgb_encode(z).sum().backward();
  EXPECT_NEAR(z.grad()[0].item<float>(), std::pow(0.3f, 1.0f / 2.2f - 1.0f) / 2.2f, 1e-5);
}

TEST(MapsTensor, RoundTrip) {
  auto t = random_map_tensor(1, 6, 5, 7)[0].to(torch::kFloat);
  const auto m = maps_from_tensor(t);
  EXPECT_EQ(m.width, 5);
  EXPECT_EQ(m.height, 6);
  EXPECT_TRUE(torch::allclose(maps_to_tensor(m).to(torch::kFloat), t));
}
