#include "neuralmat/render_op.hpp"

#include <stdexcept>

#include "neuralmat/material_nets.hpp"

namespace neuralmat {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

CaptureGeometry rotated(const CaptureGeometry& base, const torch::Tensor& angles, int64_t n) {
  CaptureGeometry g = base;
  if (angles.defined()) {
    auto a = angles[n].to(torch::kDouble);
    g.rotation_h += a[0].item<double>();
    g.rotation_v += a[1].item<double>();
  }
  return g;
}

torch::Tensor radiance_tensor(const RenderedImage& r) {
  return torch::from_blob(const_cast<double*>(r.radiance.data()), {3, r.height, r.width}, torch::kDouble)
      .to(torch::kFloat);
}

struct RenderContext {
  CaptureGeometry geometry;
  RenderOptions options;
};

class RenderFunction : public torch::autograd::Function<RenderFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor maps, torch::Tensor angles, bool has_angles,
                               const RenderContext& rc) {
    const auto n = maps.size(0);
    auto out = torch::empty({n, 3, maps.size(2), maps.size(3)}, maps.options().dtype(torch::kFloat));
    torch::Tensor a = has_angles ? angles : torch::Tensor();
    for (int64_t i = 0; i < n; ++i) {
      const auto m = maps_from_tensor(maps[i]);
      out[i].copy_(radiance_tensor(shade(m, rotated(rc.geometry, a, i), rc.options)));
    }
    ctx->save_for_backward({maps, angles});
    ctx->saved_data["has_angles"] = has_angles;
    ctx->saved_data["fov"] = rc.geometry.fov_deg;
    ctx->saved_data["distance"] = rc.geometry.plane_distance;
    ctx->saved_data["rh"] = rc.geometry.rotation_h;
    ctx->saved_data["rv"] = rc.geometry.rotation_v;
    ctx->saved_data["intensity"] = rc.geometry.light_intensity;
    ctx->saved_data["has_light"] = rc.geometry.light_position.has_value();
    const Vec3 l = rc.geometry.light();
    ctx->saved_data["light"] = std::vector<double>{l.x, l.y, l.z};
    ctx->saved_data["alpha"] = static_cast<int64_t>(rc.options.alpha_mode);
    ctx->saved_data["pixel_scale"] = rc.options.pixel_scale;
    return out;
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_outputs) {
    auto saved = ctx->get_saved_variables();
    auto maps = saved[0];
    auto angles = saved[1];
    const bool has_angles = ctx->saved_data["has_angles"].toBool();
    CaptureGeometry geom;
    geom.fov_deg = ctx->saved_data["fov"].toDouble();
    geom.plane_distance = ctx->saved_data["distance"].toDouble();
    geom.rotation_h = ctx->saved_data["rh"].toDouble();
    geom.rotation_v = ctx->saved_data["rv"].toDouble();
    geom.light_intensity = ctx->saved_data["intensity"].toDouble();
    if (ctx->saved_data["has_light"].toBool()) {
      auto l = ctx->saved_data["light"].toDoubleVector();
      geom.light_position = Vec3{l[0], l[1], l[2]};
    }
    RenderOptions opts;
    opts.alpha_mode = static_cast<AlphaMode>(ctx->saved_data["alpha"].toInt());
    opts.pixel_scale = ctx->saved_data["pixel_scale"].toDouble();

    auto upstream = grad_outputs[0].to(torch::kDouble).contiguous();
    const auto n = maps.size(0);
    const auto h = maps.size(2), w = maps.size(3);
    const std::size_t px = static_cast<std::size_t>(h * w);
    auto grad_maps = torch::zeros({n, kMapChannels, h, w}, torch::kDouble);
    auto grad_angles = has_angles ? torch::zeros({n, 2}, torch::kDouble) : torch::Tensor();
    torch::Tensor a = has_angles ? angles : torch::Tensor();

    for (int64_t i = 0; i < n; ++i) {
      const auto m = maps_from_tensor(maps[i]);
      const auto g = rotated(geom, a, i);
      auto up_i = upstream[i].contiguous();
      std::span<const double> up(up_i.data_ptr<double>(), 3 * px);
      const auto grads = shade_gradient(m, g, up, opts);
      double* dst = grad_maps[i].data_ptr<double>();
      std::copy(grads.diffuse.begin(), grads.diffuse.end(), dst);
      std::copy(grads.specular.begin(), grads.specular.end(), dst + kSpecular * px);
      std::copy(grads.roughness.begin(), grads.roughness.end(), dst + kRoughness * px);
      std::copy(grads.height_map.begin(), grads.height_map.end(), dst + kHeight * px);

      if (has_angles) {
        auto probe = [&](double dh, double dv) {
          CaptureGeometry p = g;
          p.rotation_h += dh;
          p.rotation_v += dv;
          const auto r = shade(m, p, opts);
          double s = 0;
          for (std::size_t k = 0; k < r.radiance.size(); ++k) s += r.radiance[k] * up[k];
          return s;
        };
        grad_angles[i][0] = (probe(kAngleStep, 0) - probe(-kAngleStep, 0)) / (2 * kAngleStep);
        grad_angles[i][1] = (probe(0, kAngleStep) - probe(0, -kAngleStep)) / (2 * kAngleStep);
      }
    }
    return {grad_maps.to(maps.scalar_type()),
            has_angles ? grad_angles.to(angles.scalar_type()) : torch::Tensor(), torch::Tensor(),
            torch::Tensor()};
  }
};

}  // namespace

torch::Tensor render_maps(const torch::Tensor& maps, const torch::Tensor& angles, const CaptureGeometry& geometry,
                          const RenderOptions& options) {
  if (maps.dim() != 4 || maps.size(1) != kMapChannels)
    throw std::invalid_argument("render_maps: maps must be [N, 6, H, W]");
  const bool has_angles = angles.defined();
  if (has_angles && (angles.dim() != 2 || angles.size(0) != maps.size(0) || angles.size(1) != 2))
    throw std::invalid_argument("render_maps: angles must be [N, 2]");
  geometry.validate();
  RenderContext rc{geometry, options};
  auto a = has_angles ? angles : torch::zeros({maps.size(0), 2}, maps.options());
  return RenderFunction::apply(maps, a, has_angles, rc);
}

torch::Tensor srgb_encode(const torch::Tensor& linear) {
  return torch::clamp(linear, 1e-8, 1.0).pow(1.0 / 2.2);
}

}  // namespace neuralmat
