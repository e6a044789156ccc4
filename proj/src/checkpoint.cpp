#include "neuralmat/checkpoint.hpp"

#include <fstream>
#include <json.hpp>

#include "neuralmat/hash.hpp"

namespace neuralmat {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("missing checkpoint file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json to_json(const TextureLossConfig& c) {
  return {{"n_crops", c.n_crops},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"spectrum_weight", c.spectrum_weight},
          {"fourier", c.fourier}};
}

TextureLossConfig loss_from_json(const json& j) {
  TextureLossConfig c;
  c.n_crops = j.value("n_crops", c.n_crops);
  c.scale_min = j.value("scale_min", c.scale_min);
  c.scale_max = j.value("scale_max", c.scale_max);
  c.spectrum_weight = j.value("spectrum_weight", c.spectrum_weight);
  c.fourier = j.value("fourier", c.fourier);
  return c;
}

json to_json(const CaptureGeometry& g) {
  json j = {{"fov_deg", g.fov_deg},
            {"plane_distance", g.plane_distance},
            {"rotation_h", g.rotation_h},
            {"rotation_v", g.rotation_v},
            {"light_intensity", g.light_intensity}};
  if (g.light_position) j["light_position"] = {g.light_position->x, g.light_position->y, g.light_position->z};
  return j;
}

CaptureGeometry geometry_from_json(const json& j) {
  CaptureGeometry g;
  g.fov_deg = j.value("fov_deg", g.fov_deg);
  g.plane_distance = j.value("plane_distance", g.plane_distance);
  g.rotation_h = j.value("rotation_h", g.rotation_h);
  g.rotation_v = j.value("rotation_v", g.rotation_v);
  g.light_intensity = j.value("light_intensity", g.light_intensity);
  if (j.contains("light_position")) {
    auto p = j["light_position"].get<std::vector<double>>();
    g.light_position = Vec3{p.at(0), p.at(1), p.at(2)};
  }
  return g;
}

json model_json(const ModelConfig& c) {
  return {{"latent_dim", c.latent_dim()},
          {"alpha_mode", to_string(c.alpha_mode)},
          {"init_seed", c.init_seed},
          {"decoder",
           {{"widths", c.decoder.widths},
            {"noise_channels", c.decoder.noise_channels},
            {"skip_connections", c.decoder.skip_connections},
            {"height_max", c.decoder.height_max}}},
          {"encoder",
           {{"blocks", c.encoder.blocks},
            {"base_width", c.encoder.base_width},
            {"input_width", c.encoder.input_width},
            {"input_height", c.encoder.input_height}}},
          {"extractor",
           {{"width_scale", c.extractor.width_scale},
            {"native_resolution", c.extractor.native_resolution},
            {"seed", c.extractor.seed}}}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  const int d = j.at("latent_dim").get<int>();
  c.decoder.latent_dim = d;
  c.encoder.latent_dim = d;
  c.alpha_mode = alpha_mode_from_string(j.at("alpha_mode").get<std::string>());
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  const auto& dj = j.at("decoder");
  c.decoder.widths = dj.at("widths").get<std::vector<int>>();
  c.decoder.noise_channels = dj.at("noise_channels").get<int>();
  c.decoder.skip_connections = dj.at("skip_connections").get<bool>();
  c.decoder.height_max = dj.at("height_max").get<double>();
  const auto& ej = j.at("encoder");
  c.encoder.blocks = ej.at("blocks").get<std::vector<int>>();
  c.encoder.base_width = ej.at("base_width").get<int>();
  c.encoder.input_width = ej.at("input_width").get<int>();
  c.encoder.input_height = ej.at("input_height").get<int>();
  const auto& xj = j.at("extractor");
  c.extractor.width_scale = xj.at("width_scale").get<double>();
  c.extractor.native_resolution = xj.at("native_resolution").get<int>();
  c.extractor.seed = xj.at("seed").get<std::uint64_t>();
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"kl_weight", c.kl_weight},
          {"kl_warmup_fraction", c.kl_warmup_fraction},
          {"steps", c.steps},
          {"loss", to_json(c.loss)},
          {"alignment", c.alignment},
          {"seed", c.seed},
          {"geometry", to_json(c.geometry)},
          {"log_every", c.log_every},
          {"dump_every", c.dump_every},
          {"checkpoint_every", c.checkpoint_every},
          {"margin", c.margin}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.kl_warmup_fraction = j.value("kl_warmup_fraction", c.kl_warmup_fraction);
  c.steps = j.value("steps", c.steps);
  if (j.contains("loss")) c.loss = loss_from_json(j["loss"]);
  c.alignment = j.value("alignment", c.alignment);
  c.seed = j.value("seed", c.seed);
  if (j.contains("geometry")) c.geometry = geometry_from_json(j["geometry"]);
  c.log_every = j.value("log_every", c.log_every);
  c.dump_every = j.value("dump_every", c.dump_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.margin = j.value("margin", c.margin);
  return c;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return model_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) { return model_from_json(json::parse(text)); }

std::string train_config_json(const TrainConfig& config) { return train_json(config).dump(); }

TrainConfig train_config_from_json(const std::string& text) {
  return text.empty() ? TrainConfig{} : train_from_json(json::parse(text));
}

std::map<std::string, std::string> write_checksums(const fs::path& dir, const std::vector<std::string>& files) {
  std::map<std::string, std::string> sums;
  for (const auto& f : files) sums[f] = sha256_file(dir / f);
  write_json(dir / "checksums.json", json(sums));
  return sums;
}

void verify_checksums(const fs::path& dir) {
  const auto sums = read_json(dir / "checksums.json");
  for (const auto& [file, digest] : sums.items()) {
    const auto path = dir / file;
    if (!fs::exists(path)) throw CheckpointError("checkpoint file missing: '" + path.string() + "'");
    if (sha256_file(path) != digest.get<std::string>())
      throw CheckpointError("checksum mismatch for '" + path.string() + "'");
  }
}

void save_decoder(Decoder& decoder, const fs::path& path) { torch::save(decoder, path.string()); }

void load_decoder(Decoder& decoder, const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("decoder weights missing: '" + path.string() + "'");
  torch::load(decoder, path.string());
}

void save_model(Model& model, const fs::path& dir, const CheckpointState& state, torch::optim::Optimizer* optimizer) {
  fs::create_directories(dir);
  torch::save(model.encoder, (dir / "encoder.pt").string());
  save_decoder(model.decoder, dir / "decoder.pt");
  model.extractor->save_weights(dir / "extractor.pt");
  std::vector<std::string> files{"encoder.pt", "decoder.pt", "extractor.pt"};
  if (optimizer) {
    torch::save(*optimizer, (dir / "optimizer.pt").string());
    files.push_back("optimizer.pt");
  } else {
    fs::remove(dir / "optimizer.pt");
  }
  const std::string weights = sha256_file(dir / "encoder.pt") + sha256_file(dir / "decoder.pt");
  model.id = "ckpt-" + sha256_hex({reinterpret_cast<const unsigned char*>(weights.data()), weights.size()}).substr(0, 16);
  if (model.base_id.empty()) model.base_id = model.id;

  json manifest = {{"schema", kSchemaVersion},
                   {"kind", "checkpoint"},
                   {"id", model.id},
                   {"base_id", model.base_id},
                   {"latent_dim", model.config.latent_dim()},
                   {"widths", model.config.decoder.widths},
                   {"alpha_mode", to_string(model.config.alpha_mode)},
                   {"seeds", {{"init", model.config.init_seed}, {"extractor", model.config.extractor.seed}}},
                   {"model", model_json(model.config)},
                   {"extractor_weights_sha256", sha256_file(dir / "extractor.pt")},
                   {"step", state.step},
                   {"rng_state", state.rng_state}};
  if (!state.train_config.empty()) {
    manifest["train_config"] = json::parse(state.train_config);
    manifest["seeds"]["train"] = manifest["train_config"]["seed"];
  }
  write_json(dir / "manifest.json", manifest);
  files.push_back("manifest.json");
  write_checksums(dir, files);
}

Model load_model(const fs::path& dir, CheckpointState* state) {
  if (!fs::is_directory(dir)) throw CheckpointError("not a checkpoint directory: '" + dir.string() + "'");
  verify_checksums(dir);
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("schema", 0) != kSchemaVersion)
    throw CheckpointError("unsupported checkpoint schema in '" + dir.string() + "'");
  Model m;
  try {
    m = Model::create(model_from_json(manifest.at("model")));
  } catch (const json::exception& e) {
    throw CheckpointError("incomplete checkpoint manifest in '" + dir.string() + "': " + e.what());
  }
  torch::load(m.encoder, (dir / "encoder.pt").string());
  load_decoder(m.decoder, dir / "decoder.pt");
  m.extractor->load_weights(dir / "extractor.pt");
  m.extractor->eval();
  m.id = manifest.at("id").get<std::string>();
  m.base_id = manifest.value("base_id", m.id);
  if (state) {
    state->step = manifest.value("step", 0);
    state->rng_state = manifest.value("rng_state", std::uint64_t{0});
    state->train_config = manifest.contains("train_config") ? manifest["train_config"].dump() : std::string{};
  }
  return m;
}

void load_optimizer(const fs::path& dir, torch::optim::Optimizer& optimizer) {
  torch::load(optimizer, (dir / "optimizer.pt").string());
}

}  // namespace neuralmat
