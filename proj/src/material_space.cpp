#include "neuralmat/material_space.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "neuralmat/checkpoint.hpp"
#include "neuralmat/hash.hpp"

namespace neuralmat {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Captured: return "captured";
    case Provenance::Sampled: return "sampled";
    case Provenance::Interpolated: return "interpolated";
  }
  return "sampled";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "captured") return Provenance::Captured;
  if (s == "sampled") return Provenance::Sampled;
  if (s == "interpolated") return Provenance::Interpolated;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

MapFormat map_format_from_string(const std::string& s) {
  if (s == "png16" || s == "png") return MapFormat::Png16;
  if (s == "exr") return MapFormat::Exr;
  throw std::invalid_argument("unknown map format '" + s + "' (expected png16 or exr)");
}

const char* to_string(MapFormat f) { return f == MapFormat::Exr ? "exr" : "png16"; }

namespace {

std::string short_hash(const std::string& text) {
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()}).substr(0, 16);
}

std::string tensor_digest(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat).contiguous();
  return sha256_hex({reinterpret_cast<const unsigned char*>(c.data_ptr<float>()), c.numel() * sizeof(float)});
}

bool same_architecture(const DecoderConfig& a, const DecoderConfig& b) {
  return a.latent_dim == b.latent_dim && a.noise_channels == b.noise_channels && a.widths == b.widths &&
         a.skip_connections == b.skip_connections && a.height_max == b.height_max;
}

}  // namespace

Material capture(Model& model, const Image& flash, bool tune, const FinetuneConfig& config,
                 const std::string& source) {
  Material m;
  m.provenance = Provenance::Captured;
  m.source = source;
  m.base_id = model.id;
  m.alpha_mode = model.config.alpha_mode;
  m.tuned = tune;
  if (tune) {
    auto r = finetune(model, flash, config);
    m.z = r.z;
    m.decoder = r.decoder;
    m.seed = config.seed;
  } else {
    m.z = encode_image(model, flash).mean.detach().clone();
    m.decoder = model.decoder;
  }
  m.decoder->eval();
  std::string key = model.id + tensor_digest(m.z) + (tune ? "tuned" + std::to_string(config.seed) : "");
  m.id = "mat-" + short_hash(key);
  return m;
}

Material sample_prior(Model& model, std::uint64_t seed) {
  Material m;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  m.z = at::randn({1, model.config.latent_dim()}, gen, torch::TensorOptions().dtype(torch::kFloat));
  m.decoder = model.decoder;
  m.decoder->eval();
  m.provenance = Provenance::Sampled;
  m.base_id = model.id;
  m.alpha_mode = model.config.alpha_mode;
  m.seed = seed;
  m.id = "mat-" + short_hash(model.id + "prior" + std::to_string(seed));
  return m;
}

Material interpolate(const Material& a, const Material& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  if (!same_architecture(a.decoder_config(), b.decoder_config()))
    throw std::invalid_argument("interpolate: decoder architectures differ");
  if (a.alpha_mode != b.alpha_mode) throw std::invalid_argument("interpolate: alpha modes differ");
  if (a.base_id != b.base_id)
    throw std::invalid_argument("interpolate: materials descend from different checkpoints ('" + a.base_id +
                                "' vs '" + b.base_id + "')");
  Material m;
  const auto lerp = [t](const torch::Tensor& x, const torch::Tensor& y) { return x * (1.0 - t) + y * t; };
  m.z = lerp(a.z, b.z).detach();
  m.decoder = clone_decoder(a.decoder);
  {
    torch::NoGradGuard no_grad;
    auto pb = b.decoder->named_parameters();
    auto pa = a.decoder->named_parameters();
    for (auto& p : m.decoder->named_parameters()) p.value().copy_(lerp(pa[p.key()], pb[p.key()]));
  }
  m.decoder->eval();
  m.provenance = Provenance::Interpolated;
  m.parents = {a.id, b.id};
  m.base_id = a.base_id;
  m.tuned = a.tuned || b.tuned;
  m.alpha_mode = a.alpha_mode;
  char tbuf[32];
  std::snprintf(tbuf, sizeof tbuf, "%.17g", t);
  m.id = "mat-" + short_hash(a.id + "|" + b.id + "|" + tbuf);
  return m;
}

torch::Tensor decode_crop(const Material& material, Int2 origin, Int2 size, std::uint64_t seed, StatsMode mode,
                          const AdainStats* reference) {
  Decoder dec = material.decoder;
  NoiseField field(seed, dec->config().noise_channels);
  torch::NoGradGuard no_grad;
  return dec->forward(noise_to_tensor(field.sample_crop(origin, size)), material.z, mode, reference);
}

AdainStats reference_statistics(const Material& material, std::uint64_t seed, int size) {
  if (size < DecoderImpl::kSizeMultiple || size % DecoderImpl::kSizeMultiple)
    throw std::invalid_argument("reference crop size must be a positive multiple of 16");
  Decoder dec = material.decoder;
  NoiseField field(seed, dec->config().noise_channels);
  torch::NoGradGuard no_grad;
  AdainStats stats;
  dec->forward(noise_to_tensor(field.sample_crop({0, 0}, {size, size})), material.z, StatsMode::PerCrop, nullptr,
               &stats);
  return stats;
}

MaterialMaps synthesize(const Material& material, const SynthesisRequest& req, const SynthesisOptions& opt) {
  constexpr int q = DecoderImpl::kSizeMultiple;
  if (req.size.x < 1 || req.size.y < 1) throw std::invalid_argument("synthesize: size must be positive");
  if (req.origin.x % q || req.origin.y % q || req.size.x % q || req.size.y % q)
    throw std::invalid_argument("synthesize: region origin and size must be multiples of 16");
  if (opt.tile < q || opt.tile % q || opt.margin < 0 || opt.margin % q)
    throw std::invalid_argument("synthesize: tile and margin must be multiples of 16");
  const std::int64_t last_x = std::int64_t{req.origin.x} + req.size.x + opt.tile + opt.margin;
  const std::int64_t last_y = std::int64_t{req.origin.y} + req.size.y + opt.tile + opt.margin;
  const std::int64_t first_x = std::int64_t{req.origin.x} - opt.margin, first_y = std::int64_t{req.origin.y} - opt.margin;
  if (last_x > INT32_MAX || last_y > INT32_MAX || first_x < INT32_MIN || first_y < INT32_MIN)
    throw std::invalid_argument("synthesize: region exceeds the 32-bit coordinate range");

  AdainStats reference;
  if (req.mode == StatsMode::Reference) reference = reference_statistics(material, req.seed, opt.reference_size);

  const int w = req.size.x, h = req.size.y;
  auto full = torch::empty({kMapChannels, h, w}, torch::kFloat);
  const int span = opt.tile + 2 * opt.margin;
  for (int ty = 0; ty < h; ty += opt.tile)
    for (int tx = 0; tx < w; tx += opt.tile) {
      const Int2 o{req.origin.x + tx - opt.margin, req.origin.y + ty - opt.margin};
      auto maps = decode_crop(material, o, {span, span}, req.seed, req.mode,
                              req.mode == StatsMode::Reference ? &reference : nullptr)[0];
      const int cw = std::min(opt.tile, w - tx), ch = std::min(opt.tile, h - ty);
      full.slice(1, ty, ty + ch)
          .slice(2, tx, tx + cw)
          .copy_(maps.slice(1, opt.margin, opt.margin + ch).slice(2, opt.margin, opt.margin + cw));
    }
  return maps_from_tensor(full);
}

namespace {

Image plane_image(const std::vector<double>& planes, int channels, int width, int height,
                  double (*encode)(double, double), double param) {
  Image img(channels, height, width);
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<float>(encode(planes[k], param));
  return img;
}

double identity(double v, double) { return v; }
double unit_clamp(double v, double) { return std::clamp(v, 0.0, 1.0); }
double height_encode(double h, double hmax) { return std::clamp((h / hmax + 1.0) * 0.5, 0.0, 1.0); }
double normal_encode(double v, double) { return std::clamp(0.5 * (v + 1.0), 0.0, 1.0); }

}  // namespace

fs::path export_maps(const MaterialMaps& maps, const fs::path& dir, MapFormat format, const ExportInfo& info) {
  maps.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create export directory '" + dir.string() + "'");
  const auto normals = maps.normals ? *maps.normals : height_to_normals(maps.height_map, maps.width, maps.height);
  const bool exr = format == MapFormat::Exr;
  const auto raw = exr ? identity : unit_clamp;
  struct Entry {
    std::string name;
    Image img;
  };
  std::vector<Entry> entries{
      {"diffuse", plane_image(maps.diffuse, 3, maps.width, maps.height, raw, 0)},
      {"specular", plane_image(maps.specular, 1, maps.width, maps.height, raw, 0)},
      {"roughness", plane_image(maps.roughness, 1, maps.width, maps.height, raw, 0)},
      {"normal", plane_image(normals, 3, maps.width, maps.height, normal_encode, 0)},
      {"height", exr ? plane_image(maps.height_map, 1, maps.width, maps.height, identity, 0)
                     : plane_image(maps.height_map, 1, maps.width, maps.height, height_encode, info.height_max)},
  };
  json jmaps = json::object();
  for (auto& e : entries) {
    const std::string file = e.name + (exr ? ".exr" : ".png");
    const auto path = dir / file;
    if (exr)
      write_exr(path, e.img);
    else
      write_png(path, e.img, 16);
    jmaps[e.name] = {{"file", file}, {"sha256", sha256_file(path)}};
  }
  json manifest = {{"schema", kSchemaVersion},
                   {"id", info.id},
                   {"parents", info.parents},
                   {"seed", info.seed},
                   {"region", {{"x", info.origin.x}, {"y", info.origin.y}, {"width", info.size.x}, {"height", info.size.y}}},
                   {"maps", jmaps},
                   {"format", to_string(format)},
                   {"render",
                    {{"alpha_mode", to_string(info.alpha_mode)}, {"fov_deg", 45.0}, {"height_max", info.height_max}}}};
  const auto mpath = dir / "manifest.json";
  std::ofstream out(mpath);
  if (!out) throw IoError("cannot write '" + mpath.string() + "'");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write '" + mpath.string() + "'");
  return mpath;
}

MaterialMaps import_maps(const fs::path& where) {
  const fs::path mpath = fs::is_directory(where) ? where / "manifest.json" : where;
  const fs::path dir = mpath.parent_path();
  std::ifstream in(mpath);
  if (!in) throw IoError("manifest not found: '" + mpath.string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + mpath.string() + "': " + e.what());
  }
  if (manifest.value("schema", 0) != kSchemaVersion)
    throw IoError("unsupported manifest schema in '" + mpath.string() + "'");
  const double hmax = manifest["render"].value("height_max", 2.0);
  std::map<std::string, Image> images;
  for (const auto& name : exported_map_names()) {
    if (!manifest["maps"].contains(name)) throw IoError("manifest lacks map '" + name + "'");
    const auto& e = manifest["maps"][name];
    const auto path = dir / e.at("file").get<std::string>();
    if (sha256_file(path) != e.at("sha256").get<std::string>())
      throw IoError("hash mismatch for '" + path.string() + "'");
    images[name] = read_image(path);
  }
  const bool exr = manifest.value("format", std::string("png16")) == "exr";
  const Image& d = images["diffuse"];
  MaterialMaps m = MaterialMaps::uniform(d.width, d.height, {0, 0, 0}, 0, 1);
  const std::size_t n = m.pixels();
  auto check = [&](const Image& img, int channels, const std::string& name) {
    if (img.width != m.width || img.height != m.height || img.channels != channels)
      throw IoError("map '" + name + "' has an unexpected shape");
  };
  check(d, 3, "diffuse");
  check(images["specular"], 1, "specular");
  check(images["roughness"], 1, "roughness");
  check(images["height"], 1, "height");
  for (std::size_t k = 0; k < 3 * n; ++k) m.diffuse[k] = d.data[k];
  for (std::size_t k = 0; k < n; ++k) {
    m.specular[k] = images["specular"].data[k];
    m.roughness[k] = std::max<double>(images["roughness"].data[k], kMinRoughness);
    const double hv = images["height"].data[k];
    m.height_map[k] = exr ? hv : (2.0 * hv - 1.0) * hmax;
  }
  return m;
}

void save_material(const Material& material, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create material directory '" + dir.string() + "'");
  Decoder dec = material.decoder;
  save_decoder(dec, dir / "decoder.pt");
  auto z = material.z.detach().to(torch::kFloat).contiguous();
  std::vector<float> zv(z.data_ptr<float>(), z.data_ptr<float>() + z.numel());
  const auto& c = material.decoder_config();
  json j = {{"schema", kSchemaVersion},
            {"kind", "material"},
            {"id", material.id},
            {"provenance", to_string(material.provenance)},
            {"parents", material.parents},
            {"source", material.source},
            {"base_id", material.base_id},
            {"tuned", material.tuned},
            {"alpha_mode", to_string(material.alpha_mode)},
            {"seed", material.seed},
            {"latent_dim", c.latent_dim},
            {"z", zv},
            {"decoder",
             {{"widths", c.widths},
              {"noise_channels", c.noise_channels},
              {"skip_connections", c.skip_connections},
              {"height_max", c.height_max},
              {"file", "decoder.pt"}}}};
  {
    std::ofstream out(dir / "material.json");
    if (!out) throw IoError("cannot write '" + (dir / "material.json").string() + "'");
    out << j.dump(2) << '\n';
  }
  write_checksums(dir, {"decoder.pt", "material.json"});
}

Material load_material(const fs::path& dir) {
  const auto path = dir / "material.json";
  if (!fs::exists(path)) throw IoError("not a material bundle: '" + dir.string() + "'");
  verify_checksums(dir);
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed '" + path.string() + "': " + e.what());
  }
  if (j.value("schema", 0) != kSchemaVersion || j.value("kind", std::string()) != "material")
    throw IoError("unsupported material bundle '" + dir.string() + "'");
  Material m;
  try {
    DecoderConfig c;
    c.latent_dim = j.at("latent_dim").get<int>();
    const auto& dj = j.at("decoder");
    c.widths = dj.at("widths").get<std::vector<int>>();
    c.noise_channels = dj.at("noise_channels").get<int>();
    c.skip_connections = dj.at("skip_connections").get<bool>();
    c.height_max = dj.at("height_max").get<double>();
    m.decoder = Decoder(c);
    load_decoder(m.decoder, dir / dj.value("file", std::string("decoder.pt")));
    m.decoder->eval();
    auto zv = j.at("z").get<std::vector<float>>();
    if (static_cast<int>(zv.size()) != c.latent_dim) throw IoError("latent code length mismatch in '" + path.string() + "'");
    m.z = torch::from_blob(zv.data(), {1, c.latent_dim}, torch::kFloat).clone();
    m.id = j.at("id").get<std::string>();
    m.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    m.parents = j.value("parents", std::vector<std::string>{});
    m.source = j.value("source", std::string());
    m.base_id = j.value("base_id", std::string());
    m.tuned = j.value("tuned", false);
    m.alpha_mode = alpha_mode_from_string(j.value("alpha_mode", std::string("squared")));
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw IoError("incomplete material bundle '" + dir.string() + "': " + e.what());
  }
  return m;
}

}  // namespace neuralmat
