#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "neuralmat/checkpoint.hpp"
#include "neuralmat/config.hpp"
#include "neuralmat/evalharness.hpp"
#include "neuralmat/fixtures.hpp"
#include "neuralmat/material_space.hpp"
#include "neuralmat/training.hpp"

namespace fs = std::filesystem;
using namespace neuralmat;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

Config resolve(const Common& c) {
  Config cfg;
  if (!c.config_file.empty()) cfg.merge_file(c.config_file);
  cfg.merge_env();
  for (const auto& o : c.overrides) cfg.set_assignment(o);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a configuration key (section.name=value)");
  cmd->add_option("--seed", c.seed, "Run seed; every random choice derives from it");
}

Int2 parse_pair(const std::string& text, char sep, const char* what) {
  const auto p = text.find(sep);
  try {
    if (p == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const std::string lhs = text.substr(0, p), rhs = text.substr(p + 1);
    Int2 out{std::stoi(lhs, &a), std::stoi(rhs, &b)};
    if (a != lhs.size() || b != rhs.size()) throw std::invalid_argument(text);
    return out;
  } catch (const std::exception&) {
    throw UsageError(std::string(what) + " expects A" + sep + "B integers, got '" + text + "'");
  }
}

Vec3 parse_vec3(const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      v.clear();
      break;
    }
  }
  if (v.size() != 3) throw UsageError("--light expects x,y,z, got '" + text + "'");
  return {v[0], v[1], v[2]};
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory not found: '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG or JPEG images in '" + dir.string() + "'");
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

ExportInfo export_info(const Material& m, const SynthesisRequest& req) {
  ExportInfo info;
  info.id = m.id;
  info.parents = m.parents;
  info.seed = req.seed;
  info.origin = req.origin;
  info.size = req.size;
  info.alpha_mode = m.alpha_mode;
  info.height_max = m.decoder_config().height_max;
  return info;
}

StatsMode stats_mode_from_string(const std::string& s) {
  if (s == "reference") return StatsMode::Reference;
  if (s == "per-crop") return StatsMode::PerCrop;
  throw UsageError("--mode expects reference or per-crop, got '" + s + "'");
}

struct SynthArgs {
  std::string size = "256x256";
  std::string origin = "0,0";
  std::string mode = "reference";
  std::string format = "png16";
};

fs::path synthesize_and_export(const Material& m, const Config& cfg, const SynthArgs& a, const fs::path& out) {
  SynthesisRequest req;
  req.size = parse_pair(a.size, 'x', "--size");
  req.origin = parse_pair(a.origin, ',', "--origin");
  req.mode = stats_mode_from_string(a.mode);
  req.seed = derive_seed(cfg.get_u64("run.seed"), 5);
  const auto format = map_format_from_string(a.format);
  const auto maps = synthesize(m, req, cfg.synthesis_options());
  return export_maps(maps, out, format, export_info(m, req));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuralmat: flash-image material capture, synthesis and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // prepare
  Common prep_c;
  std::string prep_in, prep_out;
  auto* prep = app.add_subcommand("prepare", "Crop and resize a folder of photographs to the encoder input size");
  add_common(prep, prep_c);
  prep->add_option("--input", prep_in, "Folder of PNG/JPEG photographs")->required();
  prep->add_option("--out", prep_out, "Output folder")->required();

  // make-fixtures
  Common fix_c;
  std::string fix_out, fix_size = "256x256";
  int fix_count = 0;
  auto* fix = app.add_subcommand("make-fixtures", "Write the procedural material fixtures and their flash renders");
  add_common(fix, fix_c);
  fix->add_option("--out", fix_out, "Output folder")->required();
  fix->add_option("--size", fix_size, "WIDTHxHEIGHT");
  fix->add_option("--count", fix_count, "Number of fixtures (0 = all)");

  // train
  Common train_c;
  std::string train_data, train_out;
  std::optional<int> train_steps;
  bool train_resume = false;
  auto* train = app.add_subcommand("train", "Train encoder and decoder on a folder of flash images");
  add_common(train, train_c);
  train->add_option("--data", train_data, "Folder of flash images (default: NEURALMAT_DATA)");
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--steps", train_steps, "Total optimisation steps");
  train->add_flag("--resume", train_resume, "Continue from <out>/checkpoint");

  // finetune / capture
  Common cap_c;
  std::string cap_image, cap_ckpt, cap_out;
  bool cap_tune = false;
  std::optional<int> cap_steps;
  auto* cap = app.add_subcommand("capture", "Encode one flash image into a material bundle");
  add_common(cap, cap_c);
  cap->add_option("--image", cap_image, "Flash photograph")->required();
  cap->add_option("--checkpoint", cap_ckpt, "Checkpoint directory")->required();
  cap->add_option("--out", cap_out, "Material bundle directory")->required();
  cap->add_flag("--finetune,!--no-finetune", cap_tune, "Fine-tune the decoder on the image (default: off)");
  cap->add_option("--steps", cap_steps, "Fine-tuning steps");

  Common ft_c;
  std::string ft_image, ft_ckpt, ft_out;
  std::optional<int> ft_steps;
  auto* ft = app.add_subcommand("finetune", "Fine-tune the decoder on one flash image (capture --finetune)");
  add_common(ft, ft_c);
  ft->add_option("--image", ft_image, "Flash photograph")->required();
  ft->add_option("--checkpoint", ft_ckpt, "Checkpoint directory")->required();
  ft->add_option("--out", ft_out, "Material bundle directory")->required();
  ft->add_option("--steps", ft_steps, "Fine-tuning steps");

  // synthesize
  Common syn_c;
  SynthArgs syn_a;
  std::string syn_mat, syn_out;
  auto* syn = app.add_subcommand("synthesize", "Synthesize a region of a material's infinite field and export maps");
  add_common(syn, syn_c);
  syn->add_option("--material", syn_mat, "Material bundle directory")->required();
  syn->add_option("--out", syn_out, "Export directory")->required();
  syn->add_option("--size", syn_a.size, "WIDTHxHEIGHT, multiples of 16");
  syn->add_option("--origin", syn_a.origin, "X,Y, multiples of 16");
  syn->add_option("--mode", syn_a.mode, "reference or per-crop statistics");
  syn->add_option("--format", syn_a.format, "png16 or exr");

  // interpolate
  Common int_c;
  SynthArgs int_a;
  std::string int_m1, int_m2, int_out;
  double int_t = 0.5;
  auto* interp = app.add_subcommand("interpolate", "Blend two materials (code and decoder weights)");
  add_common(interp, int_c);
  interp->add_option("--a", int_m1, "First material bundle")->required();
  interp->add_option("--b", int_m2, "Second material bundle")->required();
  interp->add_option("--t", int_t, "Blend weight in [0, 1]")->required();
  interp->add_option("--out", int_out, "Output directory")->required();
  interp->add_option("--size", int_a.size, "Export size WIDTHxHEIGHT");
  interp->add_option("--format", int_a.format, "png16 or exr");

  // sample
  Common smp_c;
  SynthArgs smp_a;
  std::string smp_ckpt, smp_out;
  auto* smp = app.add_subcommand("sample", "Draw a material from the latent prior");
  add_common(smp, smp_c);
  smp->add_option("--checkpoint", smp_ckpt, "Checkpoint directory")->required();
  smp->add_option("--out", smp_out, "Output directory")->required();
  smp->add_option("--size", smp_a.size, "Export size WIDTHxHEIGHT");
  smp->add_option("--format", smp_a.format, "png16 or exr");

  // render
  Common ren_c;
  std::string ren_maps, ren_out, ren_light, ren_rot;
  std::optional<double> ren_intensity;
  auto* ren = app.add_subcommand("render", "Shade exported maps under a point light");
  add_common(ren, ren_c);
  ren->add_option("--maps", ren_maps, "Exported map directory or manifest")->required();
  ren->add_option("--out", ren_out, "Output PNG")->required();
  ren->add_option("--light", ren_light, "Light position x,y,z (default: flash at the camera)");
  ren->add_option("--intensity", ren_intensity, "Light intensity");
  ren->add_option("--rotation", ren_rot, "Plane rotation h,v in radians");

  // evaluate
  Common ev_c;
  std::string ev_fixtures, ev_ckpt, ev_out, ev_method = "model", ev_size = "128x128";
  int ev_count = 0;
  auto* ev = app.add_subcommand("evaluate", "Relighting benchmark on synthetic or ingested map sets");
  add_common(ev, ev_c);
  ev->add_option("--fixtures", ev_fixtures, "Folder of map sets (default: built-in procedural fixtures)");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory (model methods)");
  ev->add_option("--method", ev_method, "ground-truth, gray, model or model-tuned");
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->add_option("--size", ev_size, "Procedural fixture size WIDTHxHEIGHT");
  ev->add_option("--count", ev_count, "Number of procedural fixtures (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (prep->parsed()) {
      const Config cfg = resolve(prep_c);
      const auto mc = cfg.model_config();
      prepare_dir(prep_out);
      int k = 0;
      for (const auto& f : list_images(prep_in)) {
        const Image img = center_crop_resize(to_rgb(read_image(f)), mc.encoder.input_width, mc.encoder.input_height);
        write_png(fs::path(prep_out) / (f.stem().string() + ".png"), img);
        ++k;
      }
      cfg.write(fs::path(prep_out) / "config.ini");
      std::cout << "prepared " << k << " images in " << prep_out << "\n";
    } else if (fix->parsed()) {
      const Config cfg = resolve(fix_c);
      const Int2 size = parse_pair(fix_size, 'x', "--size");
      const auto geom = cfg.geometry();
      const double hmax = cfg.get_double("model.height_max");
      RenderOptions ro{alpha_mode_from_string(cfg.get("model.alpha_mode")), 1.0};
      prepare_dir(fix_out);
      for (const auto& f : make_fixtures(size.x, size.y, cfg.get_u64("run.seed"), fix_count)) {
        const fs::path dir = fs::path(fix_out) / f.name;
        prepare_dir(dir);
        const auto& m = f.maps;
        const auto plane = [&](const std::vector<double>& v, int ch, auto enc) {
          Image img(ch, m.height, m.width);
          for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<float>(enc(v[k]));
          return img;
        };
        const auto id = [](double v) { return std::clamp(v, 0.0, 1.0); };
        write_png(dir / "diffuse.png", plane(m.diffuse, 3, id), 16);
        write_png(dir / "specular.png", plane(m.specular, 1, id), 16);
        write_png(dir / "roughness.png", plane(m.roughness, 1, id), 16);
        write_png(dir / "height.png", plane(m.height_map, 1, [&](double h) { return std::clamp((h / hmax + 1) / 2, 0.0, 1.0); }), 16);
        write_png(dir / "normal.png", plane(height_to_normals(m.height_map, m.width, m.height), 3,
                                            [](double n) { return std::clamp(0.5 * (n + 1), 0.0, 1.0); }), 16);
        write_png(dir / "flash.png", shade(m, geom, ro).srgb());
      }
      cfg.write(fs::path(fix_out) / "config.ini");
      std::cout << "wrote fixtures to " << fix_out << "\n";
    } else if (train->parsed()) {
      Config cfg = resolve(train_c);
      if (!train_data.empty()) cfg.set("paths.data", train_data);
      if (train_steps) cfg.set("train.steps", std::to_string(*train_steps));
      const std::string data = cfg.get("paths.data");
      if (data.empty()) {
        std::cerr << "train: no dataset given (--data or NEURALMAT_DATA)\n" << train->help();
        return kExitUsage;
      }
      const fs::path out(train_out);
      prepare_dir(out);
      cfg.write(out / "config.ini");
      std::vector<Image> images;
      for (const auto& f : list_images(data)) images.push_back(read_image(f));
      auto tc = cfg.train_config();
      Trainer trainer = train_resume ? Trainer::resume(out / "checkpoint", tc)
                                     : Trainer(Model::create(cfg.model_config()), tc);
      const auto t0 = std::chrono::steady_clock::now();
      trainer.train(images, out, [&](const LossBreakdown& lb) {
        if (tc.log_every > 0 && lb.step % tc.log_every == 0)
          std::printf("step %d texture %.6f kl %.4f total %.6f\n", lb.step, lb.texture, lb.kl, lb.total);
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "checkpoint " << (out / "checkpoint").string() << " (" << trainer.step() << " steps, " << secs
                << " s)\n";
    } else if (cap->parsed() || ft->parsed()) {
      const bool is_ft = ft->parsed();
      Config cfg = resolve(is_ft ? ft_c : cap_c);
      const auto& steps = is_ft ? ft_steps : cap_steps;
      if (steps) cfg.set("finetune.steps", std::to_string(*steps));
      const fs::path image = is_ft ? ft_image : cap_image;
      const fs::path out = is_ft ? ft_out : cap_out;
      Model model = load_model(is_ft ? ft_ckpt : cap_ckpt);
      const Image flash = read_image(image);
      const auto t0 = std::chrono::steady_clock::now();
      const Material m = capture(model, flash, is_ft || cap_tune, cfg.finetune_config(), image.filename().string());
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      save_material(m, out);
      cfg.write(out / "config.ini");
      std::cout << "material " << m.id << " -> " << out.string() << " (" << secs << " s)\n";
    } else if (syn->parsed()) {
      const Config cfg = resolve(syn_c);
      const Material m = load_material(syn_mat);
      const auto manifest = synthesize_and_export(m, cfg, syn_a, syn_out);
      cfg.write(fs::path(syn_out) / "config.ini");
      std::cout << manifest.string() << "\n";
    } else if (interp->parsed()) {
      const Config cfg = resolve(int_c);
      const Material m = interpolate(load_material(int_m1), load_material(int_m2), int_t);
      const fs::path out(int_out);
      save_material(m, out / "material");
      const auto manifest = synthesize_and_export(m, cfg, int_a, out / "maps");
      cfg.write(out / "config.ini");
      std::cout << manifest.string() << "\n";
    } else if (smp->parsed()) {
      const Config cfg = resolve(smp_c);
      Model model = load_model(smp_ckpt);
      const Material m = sample_prior(model, derive_seed(cfg.get_u64("run.seed"), 6));
      const fs::path out(smp_out);
      save_material(m, out / "material");
      const auto manifest = synthesize_and_export(m, cfg, smp_a, out / "maps");
      cfg.write(out / "config.ini");
      std::cout << manifest.string() << "\n";
    } else if (ren->parsed()) {
      const Config cfg = resolve(ren_c);
      const MaterialMaps maps = import_maps(ren_maps);
      CaptureGeometry g = cfg.geometry();
      if (!ren_light.empty()) g.light_position = parse_vec3(ren_light);
      if (ren_intensity) g.light_intensity = *ren_intensity;
      if (!ren_rot.empty()) {
        const auto p = ren_rot.find(',');
        if (p == std::string::npos) throw UsageError("--rotation expects h,v");
        g.rotation_h = std::stod(ren_rot.substr(0, p));
        g.rotation_v = std::stod(ren_rot.substr(p + 1));
      }
      RenderOptions ro{alpha_mode_from_string(cfg.get("model.alpha_mode")), 1.0};
      const fs::path out(ren_out);
      if (out.has_parent_path()) prepare_dir(out.parent_path());
      write_png(out, shade(maps, g, ro).srgb());
      cfg.write(fs::path(out).replace_extension(".config.ini"));
      std::cout << out.string() << "\n";
    } else if (ev->parsed()) {
      const Config cfg = resolve(ev_c);
      std::vector<Fixture> fixtures;
      if (!ev_fixtures.empty()) {
        fixtures = load_fixture_dir(ev_fixtures, cfg.get_double("model.height_max"));
      } else {
        const Int2 size = parse_pair(ev_size, 'x', "--size");
        fixtures = make_fixtures(size.x, size.y, cfg.get_u64("run.seed"), ev_count);
      }
      std::optional<Model> model;
      BenchmarkMethod method;
      if (ev_method == "ground-truth") {
        method = ground_truth_method();
      } else if (ev_method == "gray") {
        method = constant_gray_method();
      } else if (ev_method == "model" || ev_method == "model-tuned") {
        if (ev_ckpt.empty()) throw UsageError("--method " + ev_method + " needs --checkpoint");
        model = load_model(ev_ckpt);
        method = model_method(*model, ev_method == "model-tuned", cfg.finetune_config());
      } else {
        throw UsageError("--method expects ground-truth, gray, model or model-tuned");
      }
      FeatureExtractor extractor = model ? model->extractor : FeatureExtractor(cfg.model_config().extractor);
      extractor->eval();
      auto bc = cfg.benchmark_config();
      if (model) bc.render = model->render_options();
      auto report = relight_benchmark(extractor, fixtures, method, bc, ev_method);
      if (model) report.checkpoint = model->id;
      const fs::path out(ev_out);
      prepare_dir(out);
      write_text(out / "report.json", report.to_json() + "\n");
      write_text(out / "report.csv", report.to_csv());
      write_text(out / "report.md", report.to_markdown());
      cfg.write(out / "config.ini");
      std::cout << report.to_markdown();
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
