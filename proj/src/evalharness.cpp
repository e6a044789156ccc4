#include "neuralmat/evalharness.hpp"

#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "neuralmat/rng.hpp"

namespace neuralmat {

using json = nlohmann::json;

namespace {

std::vector<torch::Tensor> full_features(FeatureExtractor& extractor, const Image& img) {
  torch::NoGradGuard no_grad;
  return extractor->forward(image_to_tensor(to_rgb(img)).unsqueeze(0));
}

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(what) + ": images differ in size (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
}

}  // namespace

double style_error(FeatureExtractor& extractor, const Image& a, const Image& b) {
  require_same_size(a, b, "style_error");
  auto da = describe(full_features(extractor, a), false);
  auto db = describe(full_features(extractor, b), false);
  return descriptor_l1(da, db, 0.0).item<double>();
}

double diversity(FeatureExtractor& extractor, const std::vector<Image>& realizations) {
  if (realizations.size() < 2) throw std::invalid_argument("diversity: need at least two realizations");
  std::vector<std::vector<torch::Tensor>> feats;
  for (const auto& r : realizations) {
    require_same_size(realizations.front(), r, "diversity");
    feats.push_back(full_features(extractor, r));
  }
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t j = i + 1; j < feats.size(); ++j, ++pairs)
      for (std::size_t l = 0; l < feats[i].size(); ++l) sum += (feats[i][l] - feats[j][l]).abs().mean().item<double>();
  return sum / pairs;
}

std::array<double, 3> srgb_to_xyz(double r, double g, double b) {
  return {0.4124564 * r + 0.3575761 * g + 0.1804375 * b, 0.2126729 * r + 0.7151522 * g + 0.0721750 * b,
          0.0193339 * r + 0.1191920 * g + 0.9503041 * b};
}

double xyz_histogram_l1(const Image& a, const Image& b, int bins) {
  if (bins < 1) throw std::invalid_argument("xyz_histogram_l1: bins must be positive");
  const auto white = srgb_to_xyz(1, 1, 1);
  auto hist = [&](const Image& src) {
    const Image img = to_rgb(src);
    const std::size_t n = img.plane();
    std::array<std::vector<double>, 3> h;
    for (auto& v : h) v.assign(bins, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const auto xyz = srgb_to_xyz(srgb_decode(img.data[k]), srgb_decode(img.data[n + k]), srgb_decode(img.data[2 * n + k]));
      for (int c = 0; c < 3; ++c) {
        const int bin = std::clamp(static_cast<int>(xyz[c] / white[c] * bins), 0, bins - 1);
        h[c][bin] += 1.0 / static_cast<double>(n);
      }
    }
    return h;
  };
  const auto ha = hist(a), hb = hist(b);
  double total = 0;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < bins; ++k) total += std::abs(ha[c][k] - hb[c][k]);
  return total / 3.0;
}

std::vector<Vec3> sample_lights(int n, std::uint64_t seed, double cap_half_angle_deg, double distance) {
  if (n < 1) throw std::invalid_argument("sample_lights: need at least one light");
  Rng rng(seed);
  const double cos_max = std::cos(cap_half_angle_deg * std::numbers::pi / 180.0);
  std::vector<Vec3> lights;
  for (int i = 0; i < n; ++i) {
    const double c = rng.uniform(cos_max, 1.0);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    lights.push_back(Vec3{s * std::cos(phi), s * std::sin(phi), c} * distance);
  }
  return lights;
}

BenchmarkMethod ground_truth_method() {
  return [](const Image&, const Fixture& f, std::uint64_t) { return f.maps; };
}

BenchmarkMethod constant_gray_method() {
  return [](const Image&, const Fixture& f, std::uint64_t) {
    return MaterialMaps::uniform(f.maps.width, f.maps.height, {0.5, 0.5, 0.5}, 0.04, 0.5);
  };
}

BenchmarkMethod model_method(Model& model, bool tune, const FinetuneConfig& finetune) {
  // Realizations of one fixture share its capture.
  auto cache = std::make_shared<std::map<std::string, Material>>();
  return [&model, tune, finetune, cache](const Image& flash, const Fixture& f, std::uint64_t seed) {
    auto it = cache->find(f.name);
    if (it == cache->end()) it = cache->emplace(f.name, capture(model, flash, tune, finetune, f.name)).first;
    SynthesisRequest req;
    req.size = {f.maps.width, f.maps.height};
    req.seed = seed;
    return synthesize(it->second, req);
  };
}

BenchmarkReport relight_benchmark(FeatureExtractor& extractor, const std::vector<Fixture>& fixtures,
                                  const BenchmarkMethod& method, const BenchmarkConfig& config,
                                  const std::string& method_name) {
  if (fixtures.empty()) throw std::invalid_argument("relight_benchmark: no fixtures");
  if (config.realizations < 1) throw std::invalid_argument("relight_benchmark: need at least one realization");
  BenchmarkReport report;
  report.method = method_name;
  report.seed = config.seed;
  report.lights = sample_lights(config.n_lights, config.seed, config.cap_half_angle_deg, config.light_distance);
  std::vector<CaptureGeometry> relit;
  for (const auto& l : report.lights) {
    CaptureGeometry g = config.flash;
    g.light_position = l;
    g.light_intensity = config.light_intensity;
    relit.push_back(g);
  }
  Rng seeds(config.seed ^ 0x5EEDULL);
  for (const auto& fx : fixtures) {
    const Image flash = shade(fx.maps, config.flash, config.render).srgb();
    std::vector<Image> gt_relit;
    for (const auto& g : relit) gt_relit.push_back(shade(fx.maps, g, config.render).srgb());
    MaterialScore score;
    score.name = fx.name;
    std::vector<Image> flashes;
    for (int r = 0; r < config.realizations; ++r) {
      const MaterialMaps maps = method(flash, fx, seeds.next_u64());
      if (maps.width != fx.maps.width || maps.height != fx.maps.height)
        throw std::invalid_argument("relight_benchmark: method output size differs from fixture '" + fx.name + "'");
      const Image f = shade(maps, config.flash, config.render).srgb();
      score.style_flash += style_error(extractor, f, flash);
      score.xyz_hist_l1 += xyz_histogram_l1(f, flash);
      for (std::size_t k = 0; k < relit.size(); ++k)
        score.style_relit += style_error(extractor, shade(maps, relit[k], config.render).srgb(), gt_relit[k]);
      flashes.push_back(f);
    }
    score.style_flash /= config.realizations;
    score.xyz_hist_l1 /= config.realizations;
    score.style_relit /= config.realizations * static_cast<double>(relit.size());
    score.diversity = flashes.size() > 1 ? diversity(extractor, flashes) : 0.0;
    report.materials.push_back(score);
  }
  report.mean.name = "mean";
  for (const auto& s : report.materials) {
    report.mean.style_flash += s.style_flash;
    report.mean.style_relit += s.style_relit;
    report.mean.diversity += s.diversity;
    report.mean.xyz_hist_l1 += s.xyz_hist_l1;
  }
  const double n = static_cast<double>(report.materials.size());
  report.mean.style_flash /= n;
  report.mean.style_relit /= n;
  report.mean.diversity /= n;
  report.mean.xyz_hist_l1 /= n;
  return report;
}

namespace {

json score_json(const MaterialScore& s) {
  return {{"name", s.name},
          {"style_flash", s.style_flash},
          {"style_relit", s.style_relit},
          {"diversity", s.diversity},
          {"xyz_hist_l1", s.xyz_hist_l1}};
}

}  // namespace

std::string BenchmarkReport::to_json() const {
  json j = {{"method", method}, {"seed", seed}, {"checkpoint", checkpoint}};
  j["lights"] = json::array();
  for (const auto& l : lights) j["lights"].push_back({l.x, l.y, l.z});
  j["materials"] = json::array();
  for (const auto& s : materials) j["materials"].push_back(score_json(s));
  j["mean"] = score_json(mean);
  return j.dump(2);
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "method,material,style_flash,style_relit,diversity,xyz_hist_l1\n";
  auto row = [&](const MaterialScore& s) {
    os << method << ',' << s.name << ',' << s.style_flash << ',' << s.style_relit << ',' << s.diversity << ','
       << s.xyz_hist_l1 << '\n';
  };
  for (const auto& s : materials) row(s);
  row(mean);
  return os.str();
}

std::string BenchmarkReport::to_markdown() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| material | style flash | style relit | diversity | XYZ hist L1 |\n";
  os << "|---|---:|---:|---:|---:|\n";
  auto row = [&](const MaterialScore& s, bool bold) {
    const char* b = bold ? "**" : "";
    os << "| " << b << s.name << b << " | " << s.style_flash << " | " << s.style_relit << " | " << s.diversity
       << " | " << s.xyz_hist_l1 << " |\n";
  };
  for (const auto& s : materials) row(s, false);
  row(mean, true);
  return os.str();
}

}  // namespace neuralmat
