#include "neuralmat/brdf.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace neuralmat {

namespace {

constexpr double kDenominatorGuard = 1e-6;
constexpr double kCosineFloor = 1e-6;

struct Mat3 {
  double m[3][3];

  Vec3 operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  Vec3 transpose_mul(const Vec3& v) const {
    return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z, m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
  }
};

// Rotation about the vertical axis by rotation_h followed by the horizontal
// axis by rotation_v.
Mat3 plane_rotation(const CaptureGeometry& g) {
  const double ch = std::cos(g.rotation_h), sh = std::sin(g.rotation_h);
  const double cv = std::cos(g.rotation_v), sv = std::sin(g.rotation_v);
  // Rx(v) * Ry(h)
  return Mat3{{{ch, 0.0, sh}, {sv * sh, cv, -sv * ch}, {-cv * sh, sv, cv * ch}}};
}

// Pixel center on the unrotated plane z = 0. The field of view spans the larger
// image dimension.
Vec3 plane_point(const CaptureGeometry& g, int width, int height, int i, int j) {
  const double half_extent = g.plane_distance * std::tan(0.5 * g.fov_deg * std::numbers::pi / 180.0);
  const double pixel = half_extent / (0.5 * std::max(width, height));
  return {(j + 0.5 - 0.5 * width) * pixel, (0.5 * height - i - 0.5) * pixel, 0.0};
}

// Unnormalized normal m = (-dh/dx, -dh/dy_up, 1) and the stencil that produced it.
struct Slope {
  double gx, gy_down;
};

Slope height_slope(std::span<const double> h, int width, int rows, int i, int j, double scale) {
  auto at = [&](int r, int c) { return h[static_cast<std::size_t>(r) * width + c]; };
  double gx, gy;
  if (j == 0)
    gx = (at(i, 1) - at(i, 0)) / scale;
  else if (j == width - 1)
    gx = (at(i, j) - at(i, j - 1)) / scale;
  else
    gx = (at(i, j + 1) - at(i, j - 1)) / (2.0 * scale);
  if (i == 0)
    gy = (at(1, j) - at(0, j)) / scale;
  else if (i == rows - 1)
    gy = (at(i, j) - at(i - 1, j)) / scale;
  else
    gy = (at(i + 1, j) - at(i - 1, j)) / (2.0 * scale);
  return {gx, gy};
}

// Scatter d(loss)/d(slope) back onto the height samples of the stencil.
void scatter_slope(std::vector<double>& dh, int width, int rows, int i, int j, double scale, double d_gx,
                   double d_gy) {
  auto add = [&](int r, int c, double v) { dh[static_cast<std::size_t>(r) * width + c] += v; };
  if (j == 0) {
    add(i, 1, d_gx / scale);
    add(i, 0, -d_gx / scale);
  } else if (j == width - 1) {
    add(i, j, d_gx / scale);
    add(i, j - 1, -d_gx / scale);
  } else {
    add(i, j + 1, d_gx / (2.0 * scale));
    add(i, j - 1, -d_gx / (2.0 * scale));
  }
  if (i == 0) {
    add(1, j, d_gy / scale);
    add(0, j, -d_gy / scale);
  } else if (i == rows - 1) {
    add(i, j, d_gy / scale);
    add(i - 1, j, -d_gy / scale);
  } else {
    add(i + 1, j, d_gy / (2.0 * scale));
    add(i - 1, j, -d_gy / (2.0 * scale));
  }
}

double ggx_d_dnh(double nh, double a) {
  const double a2 = a * a;
  const double t = nh * nh * (a2 - 1.0) + 1.0;
  return -4.0 * a2 * nh * (a2 - 1.0) / (std::numbers::pi * t * t * t);
}

double ggx_d_dalpha(double nh, double a) {
  const double a2 = a * a;
  const double t = nh * nh * (a2 - 1.0) + 1.0;
  return 2.0 * a / (std::numbers::pi * t * t) - 4.0 * a * a2 * nh * nh / (std::numbers::pi * t * t * t);
}

double lambda_d_dcos(double c, double a) {
  const double t = (1.0 - c * c) / (c * c);
  return -a * a / (2.0 * c * c * c * std::sqrt(1.0 + a * a * t));
}

double lambda_d_dalpha(double c, double a) {
  const double t = (1.0 - c * c) / (c * c);
  return a * t / (2.0 * std::sqrt(1.0 + a * a * t));
}

void check_range(const std::vector<double>& v, double lo, double hi, const char* name) {
  for (double x : v)
    if (!std::isfinite(x) || x < lo || x > hi)
      throw std::invalid_argument(std::string("MaterialMaps: ") + name + " value " + std::to_string(x) +
                                  " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

// Everything shade and shade_gradient share for one pixel.
struct PixelFrame {
  Vec3 n, l, v, h;
  double nl, nv, nh, vh, falloff;
  bool lit;
};

class FrameBuilder {
 public:
  FrameBuilder(const MaterialMaps& maps, const CaptureGeometry& geom, const RenderOptions& opts)
      : maps_(maps), geom_(geom), rot_(plane_rotation(geom)) {
    normals_ = maps.normals ? *maps.normals
                            : height_to_normals(maps.height_map, maps.width, maps.height, opts.pixel_scale);
  }

  const Mat3& rotation() const { return rot_; }

  PixelFrame at(int i, int j) const {
    const std::size_t p = static_cast<std::size_t>(i) * maps_.width + j;
    const std::size_t plane = maps_.pixels();
    PixelFrame f{};
    const Vec3 n_local{normals_[p], normals_[plane + p], normals_[2 * plane + p]};
    f.n = rot_ * n_local;
    const Vec3 pos = rot_ * plane_point(geom_, maps_.width, maps_.height, i, j);
    const Vec3 to_light = geom_.light() - pos;
    const double dist2 = to_light.dot(to_light);
    f.l = to_light * (1.0 / std::sqrt(dist2));
    f.v = (geom_.camera_position() - pos).normalized();
    f.h = (f.l + f.v).normalized();
    f.nl = f.n.dot(f.l);
    f.nv = f.n.dot(f.v);
    f.nh = std::clamp(f.n.dot(f.h), 0.0, 1.0);
    f.vh = std::clamp(f.v.dot(f.h), 0.0, 1.0);
    f.falloff = geom_.light_intensity / dist2;
    f.lit = f.nl > 0.0 && f.nv > 0.0;
    return f;
  }

 private:
  const MaterialMaps& maps_;
  const CaptureGeometry& geom_;
  Mat3 rot_;
  std::vector<double> normals_;
};

}  // namespace

const char* to_string(AlphaMode mode) { return mode == AlphaMode::Squared ? "squared" : "linear"; }

AlphaMode alpha_mode_from_string(const std::string& s) {
  if (s == "squared") return AlphaMode::Squared;
  if (s == "linear") return AlphaMode::Linear;
  throw std::invalid_argument("unknown alpha_mode '" + s + "' (expected squared|linear)");
}

MaterialMaps MaterialMaps::uniform(int width, int height, Vec3 rgb, double specular, double roughness,
                                   double height_value) {
  MaterialMaps m;
  m.width = width;
  m.height = height;
  const std::size_t n = m.pixels();
  m.diffuse.resize(3 * n);
  std::fill_n(m.diffuse.begin(), n, rgb.x);
  std::fill_n(m.diffuse.begin() + n, n, rgb.y);
  std::fill_n(m.diffuse.begin() + 2 * n, n, rgb.z);
  m.specular.assign(n, specular);
  m.roughness.assign(n, roughness);
  m.height_map.assign(n, height_value);
  return m;
}

void MaterialMaps::validate() const {
  if (width < 2 || height < 2) throw std::invalid_argument("MaterialMaps: need at least 2x2 pixels");
  const std::size_t n = pixels();
  if (diffuse.size() != 3 * n || specular.size() != n || roughness.size() != n || height_map.size() != n)
    throw std::invalid_argument("MaterialMaps: channel planes do not share the map size");
  if (normals && normals->size() != 3 * n)
    throw std::invalid_argument("MaterialMaps: normal map does not match the map size");
  check_range(diffuse, 0.0, 1.0, "diffuse");
  check_range(specular, 0.0, 1.0, "specular");
  check_range(roughness, kMinRoughness, 1.0, "roughness");
  for (double x : height_map)
    if (!std::isfinite(x)) throw std::invalid_argument("MaterialMaps: non-finite height");
}

void CaptureGeometry::validate() const {
  if (!(fov_deg > 0.0 && fov_deg < 90.0)) throw std::invalid_argument("CaptureGeometry: fov must be in (0, 90)");
  if (!(plane_distance > 0.0)) throw std::invalid_argument("CaptureGeometry: plane distance must be positive");
  const double limit = std::numbers::pi / 4.0;
  if (!(std::abs(rotation_h) < limit && std::abs(rotation_v) < limit))
    throw std::invalid_argument("CaptureGeometry: rotation angles must lie in (-pi/4, pi/4)");
  if (!(light_intensity >= 0.0)) throw std::invalid_argument("CaptureGeometry: negative light intensity");
}

Image RenderedImage::linear() const {
  Image img(3, height, width);
  for (std::size_t k = 0; k < radiance.size(); ++k) img.data[k] = static_cast<float>(radiance[k]);
  return img;
}

Image RenderedImage::srgb() const {
  Image img(3, height, width);
  for (std::size_t k = 0; k < radiance.size(); ++k) img.data[k] = srgb_encode(static_cast<float>(radiance[k]));
  return img;
}

double fresnel_schlick(double cos_theta, double f0) {
  const double c = std::clamp(cos_theta, 0.0, 1.0);
  const double k = std::clamp(f0, 0.0, 1.0);
  const double m = 1.0 - c;
  const double m2 = m * m;
  return k + (1.0 - k) * m2 * m2 * m;
}

double ggx_ndf(double n_dot_h, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ggx_ndf: alpha must be positive");
  const double a2 = alpha * alpha;
  const double t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
  return a2 / (std::numbers::pi * t * t);
}

double smith_lambda(double cos_theta, double alpha) {
  const double c2 = cos_theta * cos_theta;
  const double tan2 = (1.0 - c2) / c2;
  return 0.5 * (std::sqrt(1.0 + alpha * alpha * tan2) - 1.0);
}

double smith_g(double n_dot_l, double n_dot_v, double alpha) {
  if (!(n_dot_l > 0.0) || !(n_dot_v > 0.0)) throw std::invalid_argument("smith_g: cosines must be positive");
  return 1.0 / (1.0 + smith_lambda(n_dot_l, alpha) + smith_lambda(n_dot_v, alpha));
}

double roughness_to_alpha(double roughness, AlphaMode mode) {
  return mode == AlphaMode::Squared ? roughness * roughness : roughness;
}

std::vector<double> height_to_normals(std::span<const double> height, int width, int rows, double pixel_scale) {
  if (width < 2 || rows < 2) throw std::invalid_argument("height_to_normals: need at least 2x2 samples");
  if (height.size() != static_cast<std::size_t>(width) * rows)
    throw std::invalid_argument("height_to_normals: size mismatch");
  const std::size_t plane = height.size();
  std::vector<double> out(3 * plane);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < width; ++j) {
      const Slope s = height_slope(height, width, rows, i, j, pixel_scale);
      const Vec3 n = Vec3{-s.gx, s.gy_down, 1.0}.normalized();
      const std::size_t p = static_cast<std::size_t>(i) * width + j;
      out[p] = n.x;
      out[plane + p] = n.y;
      out[2 * plane + p] = n.z;
    }
  return out;
}

RenderedImage shade(const MaterialMaps& maps, const CaptureGeometry& geom, const RenderOptions& opts) {
  maps.validate();
  geom.validate();
  const FrameBuilder frames(maps, geom, opts);
  const std::size_t plane = maps.pixels();
  RenderedImage out;
  out.width = maps.width;
  out.height = maps.height;
  out.radiance.assign(3 * plane, 0.0);
  for (int i = 0; i < maps.height; ++i)
    for (int j = 0; j < maps.width; ++j) {
      const PixelFrame f = frames.at(i, j);
      if (!f.lit) continue;
      const std::size_t p = static_cast<std::size_t>(i) * maps.width + j;
      const double alpha = std::max(roughness_to_alpha(maps.roughness[p], opts.alpha_mode), 1e-8);
      const double nl = std::max(f.nl, kCosineFloor), nv = std::max(f.nv, kCosineFloor);
      const double d = ggx_ndf(f.nh, alpha);
      const double g = smith_g(nl, nv, alpha);
      const double fr = fresnel_schlick(f.vh, maps.specular[p]);
      const double spec = d * fr * g / (4.0 * std::max(nl * nv, kDenominatorGuard));
      for (int c = 0; c < 3; ++c)
        out.radiance[c * plane + p] = (maps.diffuse[c * plane + p] / std::numbers::pi + spec) * nl * f.falloff;
    }
  return out;
}

MaterialGradients shade_gradient(const MaterialMaps& maps, const CaptureGeometry& geom,
                                 std::span<const double> upstream, const RenderOptions& opts) {
  maps.validate();
  geom.validate();
  const std::size_t plane = maps.pixels();
  if (upstream.size() != 3 * plane) throw std::invalid_argument("shade_gradient: upstream has the wrong size");

  const FrameBuilder frames(maps, geom, opts);
  MaterialGradients grad;
  grad.diffuse.assign(3 * plane, 0.0);
  grad.specular.assign(plane, 0.0);
  grad.roughness.assign(plane, 0.0);
  grad.height_map.assign(plane, 0.0);

  for (int i = 0; i < maps.height; ++i)
    for (int j = 0; j < maps.width; ++j) {
      const PixelFrame f = frames.at(i, j);
      if (!f.lit) continue;
      const std::size_t p = static_cast<std::size_t>(i) * maps.width + j;
      const double up[3] = {upstream[p], upstream[plane + p], upstream[2 * plane + p]};
      const double up_sum = up[0] + up[1] + up[2];
      if (up[0] == 0.0 && up[1] == 0.0 && up[2] == 0.0) continue;

      const double r = maps.roughness[p];
      const double alpha_raw = roughness_to_alpha(r, opts.alpha_mode);
      const double alpha = std::max(alpha_raw, 1e-8);
      const double dalpha_dr = (alpha_raw < 1e-8) ? 0.0 : (opts.alpha_mode == AlphaMode::Squared ? 2.0 * r : 1.0);

      const bool nl_floored = f.nl < kCosineFloor, nv_floored = f.nv < kCosineFloor;
      const double nl = std::max(f.nl, kCosineFloor), nv = std::max(f.nv, kCosineFloor);
      const double prod = nl * nv;
      const bool guarded = prod < kDenominatorGuard;
      const double q = std::max(prod, kDenominatorGuard);

      const double d = ggx_ndf(f.nh, alpha);
      const double g = smith_g(nl, nv, alpha);
      const double m = 1.0 - f.vh;
      const double m5 = m * m * m * m * m;
      const double f0 = maps.specular[p];
      const double fr = f0 + (1.0 - f0) * m5;
      const double spec = d * fr * g / (4.0 * q);
      const double e = f.falloff;

      // radiance_c = (kd_c / pi + spec) * nl * e
      for (int c = 0; c < 3; ++c) grad.diffuse[c * plane + p] = nl * e / std::numbers::pi * up[c];

      grad.specular[p] = (1.0 - m5) * d * g / (4.0 * q) * nl * e * up_sum;

      const double g2 = g * g;
      const double dg_dalpha = -g2 * (lambda_d_dalpha(nl, alpha) + lambda_d_dalpha(nv, alpha));
      const double dspec_dalpha = fr / (4.0 * q) * (ggx_d_dalpha(f.nh, alpha) * g + d * dg_dalpha);
      grad.roughness[p] = dspec_dalpha * dalpha_dr * nl * e * up_sum;

      if (maps.normals) continue;

      // Normal sensitivity through n.l, n.v and n.h (l, v, h do not depend on n).
      const double dg_dnl = nl_floored ? 0.0 : -g2 * lambda_d_dcos(nl, alpha);
      const double dg_dnv = nv_floored ? 0.0 : -g2 * lambda_d_dcos(nv, alpha);
      const double dq_dnl = (guarded || nl_floored) ? 0.0 : nv;
      const double dq_dnv = (guarded || nv_floored) ? 0.0 : nl;
      const double dspec_dnl = d * fr / 4.0 * (dg_dnl / q - g * dq_dnl / (q * q));
      const double dspec_dnv = d * fr / 4.0 * (dg_dnv / q - g * dq_dnv / (q * q));
      const double dspec_dnh = (f.nh <= 0.0 || f.nh >= 1.0) ? 0.0 : ggx_d_dnh(f.nh, alpha) * fr * g / (4.0 * q);

      double lin = 0.0;
      for (int c = 0; c < 3; ++c) lin += up[c] * (maps.diffuse[c * plane + p] / std::numbers::pi + spec);
      const double dL_dnl = nl_floored ? 0.0 : e * (lin + up_sum * nl * dspec_dnl);
      const double dL_dnv = e * up_sum * nl * dspec_dnv;
      const double dL_dnh = e * up_sum * nl * dspec_dnh;

      const Vec3 dn_world = f.l * dL_dnl + f.v * dL_dnv + f.h * dL_dnh;
      const Vec3 dn_local = frames.rotation().transpose_mul(dn_world);

      // Back through normalization n = m / |m| with m = (-gx, gy_down, 1).
      const Slope s = height_slope(maps.height_map, maps.width, maps.height, i, j, opts.pixel_scale);
      const Vec3 mvec{-s.gx, s.gy_down, 1.0};
      const double inv_len = 1.0 / mvec.norm();
      const Vec3 n_local = mvec * inv_len;
      const Vec3 dm = (dn_local - n_local * n_local.dot(dn_local)) * inv_len;
      scatter_slope(grad.height_map, maps.width, maps.height, i, j, opts.pixel_scale, -dm.x, dm.y);
    }
  return grad;
}

}  // namespace neuralmat
