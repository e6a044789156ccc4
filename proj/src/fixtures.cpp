#include "neuralmat/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>

#include "neuralmat/image.hpp"
#include "neuralmat/noise_field.hpp"

namespace neuralmat {

namespace fs = std::filesystem;

namespace {

struct Sample {
  Vec3 diffuse;
  double specular;
  double roughness;
  double height;
};

double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const auto h = mix64(seed ^ mix64(static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL ^
                                    static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL));
  return static_cast<double>(h >> 11) * 0x1p-53;
}

/// Smooth value noise on a unit lattice.
double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  auto fade = [](double t) { return t * t * (3 - 2 * t); };
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double a = hash01(seed, ix, iy), b = hash01(seed, ix + 1, iy);
  const double c = hash01(seed, ix, iy + 1), d = hash01(seed, ix + 1, iy + 1);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

double fbm(std::uint64_t seed, double x, double y, int octaves = 4) {
  double sum = 0, amp = 0.5, norm = 0;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(seed + o, x, y);
    norm += amp;
    x *= 2;
    y *= 2;
    amp *= 0.5;
  }
  return sum / norm;
}

/// Distance to the nearest and second nearest jittered cell point.
std::pair<double, double> cells(std::uint64_t seed, double x, double y) {
  const auto cx = static_cast<std::int64_t>(std::floor(x)), cy = static_cast<std::int64_t>(std::floor(y));
  double d1 = 1e9, d2 = 1e9;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double px = cx + dx + hash01(seed, cx + dx, cy + dy);
      const double py = cy + dy + hash01(seed + 7, cx + dx, cy + dy);
      const double d = std::hypot(x - px, y - py);
      if (d < d1) {
        d2 = d1;
        d1 = d;
      } else if (d < d2) {
        d2 = d;
      }
    }
  return {d1, d2};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

Vec3 mix(Vec3 a, Vec3 b, double t) { return a * (1 - t) + b * t; }

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

using Pattern = std::function<Sample(std::uint64_t, double, double)>;

// Coordinates are pixels; patterns are stationary by construction.
const std::vector<std::pair<std::string, Pattern>>& patterns() {
  static const std::vector<std::pair<std::string, Pattern>> list = {
      {"tiles",
       [](std::uint64_t s, double x, double y) {
         const double p = 32;
         const double gx = std::fmod(x, p), gy = std::fmod(y, p);
         const double grout = std::min({gx, gy, p - gx, p - gy});
         const double g = smoothstep(1.0, 2.5, grout);
         const double n = fbm(s, x / 8, y / 8);
         return Sample{mix({0.35, 0.33, 0.3}, Vec3{0.75, 0.72, 0.65} * (0.9 + 0.1 * n), g), 0.04 + 0.3 * g,
                       0.6 - 0.4 * g, 1.2 * g};
       }},
      {"planks",
       [](std::uint64_t s, double x, double y) {
         const double row = std::floor(y / 24);
         const double grain = std::sin(0.9 * x / 6 + 6 * fbm(s + static_cast<std::uint64_t>(row), x / 40, y / 6));
         const double seam = smoothstep(0.5, 1.5, std::min(std::fmod(y, 24.0), 24 - std::fmod(y, 24.0)));
         const Vec3 wood = mix({0.35, 0.2, 0.1}, {0.6, 0.4, 0.22}, 0.5 + 0.5 * grain);
         return Sample{wood * (0.4 + 0.6 * seam), 0.08, 0.45 + 0.1 * grain, 0.6 * seam + 0.1 * grain};
       }},
      {"brushed_metal",
       [](std::uint64_t s, double x, double y) {
         const double streak = fbm(s, x / 64, y / 1.5, 3);
         return Sample{Vec3{0.08, 0.08, 0.09} * (0.8 + 0.4 * streak), 0.85, 0.25 + 0.15 * streak, 0.3 * streak};
       }},
      {"cobble",
       [](std::uint64_t s, double x, double y) {
         auto [d1, d2] = cells(s, x / 20, y / 20);
         const double edge = smoothstep(0.02, 0.15, d2 - d1);
         const double tone = hash01(s + 3, static_cast<std::int64_t>(x / 20 + d1), 0);
         return Sample{mix({0.2, 0.18, 0.16}, Vec3{0.5, 0.47, 0.42} * (0.8 + 0.2 * tone), edge), 0.05,
                       0.8 - 0.2 * edge, 1.8 * edge * (1 - d1)};
       }},
      {"leather",
       [](std::uint64_t s, double x, double y) {
         auto [d1, d2] = cells(s, x / 6, y / 6);
         const double wrinkle = smoothstep(0.0, 0.25, d2 - d1);
         return Sample{Vec3{0.32, 0.14, 0.07} * (0.8 + 0.2 * wrinkle), 0.12, 0.55 - 0.15 * wrinkle, 0.8 * wrinkle};
       }},
      {"fabric",
       [](std::uint64_t s, double x, double y) {
         const double wx = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * x / 6);
         const double wy = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * y / 6);
         const bool over = (static_cast<int>(std::floor(x / 6)) + static_cast<int>(std::floor(y / 6))) % 2 == 0;
         const double thread = over ? wx : wy;
         const double fuzz = fbm(s, x / 3, y / 3, 2);
         return Sample{mix({0.1, 0.2, 0.45}, {0.2, 0.35, 0.7}, thread) * (0.85 + 0.15 * fuzz), 0.03, 0.9,
                       0.7 * thread};
       }},
      {"plaster",
       [](std::uint64_t s, double x, double y) {
         const double n = fbm(s, x / 24, y / 24, 5);
         return Sample{Vec3{0.82, 0.8, 0.76} * (0.85 + 0.15 * n), 0.04, 0.85, 1.5 * n};
       }},
      {"bricks",
       [](std::uint64_t s, double x, double y) {
         const double bh = 16, bw = 40;
         const double r = std::floor(y / bh);
         const double ox = std::fmod(x + (static_cast<int>(r) % 2 ? bw / 2 : 0.0), bw);
         const double oy = std::fmod(y, bh);
         const double m = smoothstep(1, 2.5, std::min({ox, oy, bw - ox, bh - oy}));
         const double tone = fbm(s, x / 10, y / 10);
         return Sample{mix({0.45, 0.44, 0.42}, Vec3{0.55, 0.2, 0.12} * (0.8 + 0.3 * tone), m), 0.04,
                       0.85 - 0.1 * m, 1.0 * m + 0.2 * tone};
       }},
      {"hex_grid",
       [](std::uint64_t, double x, double y) {
         const double sx = x / 18, sy = y / 18 * 2 / std::sqrt(3.0);
         const double fx = sx - 0.5 * sy;
         const double a = std::abs(std::fmod(std::fmod(fx, 1.0) + 1, 1.0) - 0.5);
         const double b = std::abs(std::fmod(std::fmod(sy, 1.0) + 1, 1.0) - 0.5);
         const double c = std::abs(std::fmod(std::fmod(fx + sy, 1.0) + 1, 1.0) - 0.5);
         const double edge = smoothstep(0.35, 0.45, std::max({a, b, c}));
         return Sample{mix({0.7, 0.55, 0.2}, {0.1, 0.1, 0.1}, edge), 0.6 - 0.5 * edge, 0.3 + 0.5 * edge,
                       1.0 - edge};
       }},
      {"dots",
       [](std::uint64_t s, double x, double y) {
         const double p = 14;
         const double dx = std::fmod(x, p) - p / 2, dy = std::fmod(y, p) - p / 2;
         const double r = std::hypot(dx, dy);
         const double dot = 1 - smoothstep(3.5, 4.5, r);
         const double n = fbm(s, x / 12, y / 12);
         return Sample{mix({0.15, 0.15, 0.15}, {0.85, 0.85, 0.8}, dot) * (0.9 + 0.1 * n), 0.3 * dot + 0.04,
                       0.7 - 0.5 * dot, 1.2 * dot};
       }},
      {"rust",
       [](std::uint64_t s, double x, double y) {
         const double n = fbm(s, x / 20, y / 20, 5);
         const double m = smoothstep(0.45, 0.55, n);
         return Sample{mix({0.55, 0.56, 0.58}, {0.45, 0.2, 0.08}, m), 0.7 * (1 - m) + 0.03, 0.3 + 0.6 * m,
                       0.8 * m * fbm(s + 9, x / 4, y / 4)};
       }},
      {"marble",
       [](std::uint64_t s, double x, double y) {
         const double v = 0.5 + 0.5 * std::sin((x + y) / 10 + 8 * fbm(s, x / 50, y / 50, 5));
         const double vein = std::pow(1 - v, 6);
         return Sample{mix({0.9, 0.9, 0.88}, {0.3, 0.3, 0.32}, vein), 0.3, 0.15 + 0.1 * vein, 0.2 * vein};
       }},
  };
  return list;
}

}  // namespace

const std::vector<std::string>& procedural_fixture_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& p : patterns()) n.push_back(p.first);
    return n;
  }();
  return names;
}

MaterialMaps procedural_material(const std::string& name, int width, int height, std::uint64_t seed) {
  const auto& list = patterns();
  auto it = std::find_if(list.begin(), list.end(), [&](const auto& p) { return p.first == name; });
  if (it == list.end()) throw std::invalid_argument("unknown procedural material '" + name + "'");
  const std::uint64_t s = mix64(seed ^ fnv1a(name));
  MaterialMaps m = MaterialMaps::uniform(width, height, {0, 0, 0}, 0, 1);
  const std::size_t n = m.pixels();
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * width + j;
      const Sample smp = it->second(s, j + 0.5, i + 0.5);
      m.diffuse[k] = std::clamp(smp.diffuse.x, 0.0, 1.0);
      m.diffuse[n + k] = std::clamp(smp.diffuse.y, 0.0, 1.0);
      m.diffuse[2 * n + k] = std::clamp(smp.diffuse.z, 0.0, 1.0);
      m.specular[k] = std::clamp(smp.specular, 0.0, 1.0);
      m.roughness[k] = std::clamp(smp.roughness, kMinRoughness, 1.0);
      m.height_map[k] = smp.height;
    }
  return m;
}

std::vector<Fixture> make_fixtures(int width, int height, std::uint64_t seed, int count) {
  const auto& names = procedural_fixture_names();
  const std::size_t n = count <= 0 ? names.size() : std::min<std::size_t>(count, names.size());
  std::vector<Fixture> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back({names[k], procedural_material(names[k], width, height, seed)});
  return out;
}

MaterialMaps load_map_set(const fs::path& dir, double height_max) {
  auto gray = [&](const char* file) {
    Image img = read_image(dir / file);
    if (img.channels != 1) {
      Image g(1, img.height, img.width);
      for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] = img.data[k];
      return g;
    }
    return img;
  };
  const Image diffuse = to_rgb(read_image(dir / "diffuse.png"));
  const Image spec = gray("specular.png");
  const Image rough = gray("roughness.png");
  if (!diffuse.same_shape(to_rgb(spec)) || !diffuse.same_shape(to_rgb(rough)))
    throw std::invalid_argument("map set '" + dir.string() + "' has mismatched image sizes");
  MaterialMaps m = MaterialMaps::uniform(diffuse.width, diffuse.height, {0, 0, 0}, 0, 1);
  const std::size_t n = m.pixels();
  for (std::size_t k = 0; k < 3 * n; ++k) m.diffuse[k] = diffuse.data[k];
  for (std::size_t k = 0; k < n; ++k) {
    m.specular[k] = spec.data[k];
    m.roughness[k] = std::max<double>(rough.data[k], kMinRoughness);
  }
  if (fs::exists(dir / "height.png")) {
    const Image h = gray("height.png");
    if (h.width != m.width || h.height != m.height)
      throw std::invalid_argument("map set '" + dir.string() + "' height has a different size");
    for (std::size_t k = 0; k < n; ++k) m.height_map[k] = (2.0 * h.data[k] - 1.0) * height_max;
  } else if (fs::exists(dir / "normal.png")) {
    const Image nm = to_rgb(read_image(dir / "normal.png"));
    if (nm.width != m.width || nm.height != m.height)
      throw std::invalid_argument("map set '" + dir.string() + "' normal map has a different size");
    std::vector<double> normals(3 * n);
    for (std::size_t k = 0; k < n; ++k) {
      Vec3 v{2.0 * nm.data[k] - 1.0, 2.0 * nm.data[n + k] - 1.0, 2.0 * nm.data[2 * n + k] - 1.0};
      if (v.z <= 1e-3) v.z = 1e-3;
      v = v.normalized();
      normals[k] = v.x;
      normals[n + k] = v.y;
      normals[2 * n + k] = v.z;
    }
    m.normals = std::move(normals);
  } else {
    throw IoError("map set '" + dir.string() + "' has neither height.png nor normal.png");
  }
  m.validate();
  return m;
}

std::vector<Fixture> load_fixture_dir(const fs::path& root, double height_max) {
  std::vector<Fixture> out;
  if (!fs::is_directory(root)) throw IoError("fixture directory not found: '" + root.string() + "'");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "diffuse.png")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) out.push_back({d.filename().string(), load_map_set(d, height_max)});
  return out;
}

}  // namespace neuralmat
