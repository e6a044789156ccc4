#include "neuralmat/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace neuralmat {

namespace pt = boost::property_tree;

namespace {

const char* const kDefaults = R"(
[run]
seed = 0

[paths]
data =
cache =

[model]
latent_dim = 64
widths = 32,64,128,256,256
noise_channels = 8
skip_connections = true
height_max = 2
alpha_mode = squared
encoder_blocks = 3,4,6,3
encoder_width = 64
input_width = 512
input_height = 384

[extractor]
width_scale = 1
native_resolution = 224
seed = 0
weights =

[loss]
n_crops = 4
scale_min = 0.1
scale_max = 8
spectrum_weight = 0.001
fourier = true

[train]
batch_size = 4
learning_rate = 0.0001
weight_decay = 0.00001
kl_weight = 0.001
kl_warmup_fraction = 0.1
steps = 1000
alignment = true
log_every = 1
dump_every = 100
checkpoint_every = 0
margin = 80

[finetune]
steps = 1000
learning_rate = 0.001
weight_decay = 0.00001
alignment = true
margin = 80

[render]
fov_deg = 45
plane_distance = 1
light_intensity = default

[synthesis]
tile = 256
margin = 80
reference_size = 512

[evaluate]
n_lights = 10
cap_half_angle_deg = 60
light_distance = 2
realizations = 3
)";

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
    throw ConfigError("configuration key '" + key + "' must look like section.name");
  return {key.substr(0, dot), key.substr(dot + 1)};
}

std::vector<int> int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("configuration key '" + key + "' expects a comma-separated integer list, got '" + text + "'");
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

void merge_tree(std::map<std::string, std::map<std::string, std::string>>& into, const pt::ptree& tree,
                bool allow_new) {
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty())
      throw ConfigError("configuration entry '" + section + "' is outside any section");
    for (const auto& [name, value] : entries) {
      if (!allow_new && (!into.count(section) || !into[section].count(name)))
        throw ConfigError("unknown configuration key '" + section + "." + name + "'");
      into[section][name] = trim(value.data());
    }
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream) {
  return mix64(run_seed ^ mix64(stream + 0x51ED5EEDULL));
}

Config::Config() {
  std::istringstream in(kDefaults);
  pt::ptree tree;
  pt::read_ini(in, tree);
  merge_tree(sections_, tree, true);
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.message() + " at line " + std::to_string(e.line()));
  }
  merge_tree(sections_, tree, false);
}

void Config::merge_env() {
  if (const char* v = std::getenv("NEURALMAT_DATA"); v && *v) sections_["paths"]["data"] = v;
  if (const char* v = std::getenv("NEURALMAT_CACHE"); v && *v) sections_["paths"]["cache"] = v;
}

void Config::set(const std::string& key, const std::string& value) {
  auto [s, n] = split_key(key);
  if (!sections_.count(s) || !sections_[s].count(n)) throw ConfigError("unknown configuration key '" + key + "'");
  sections_[s][n] = value;
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.name=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool Config::has(const std::string& key) const {
  auto [s, n] = split_key(key);
  auto it = sections_.find(s);
  return it != sections_.end() && it->second.count(n);
}

std::string Config::get(const std::string& key) const {
  auto [s, n] = split_key(key);
  auto it = sections_.find(s);
  if (it == sections_.end() || !it->second.count(n)) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second.at(n);
}

int Config::get_int(const std::string& key) const {
  const auto v = get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const auto v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double Config::get_double(const std::string& key) const {
  const auto v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key) const {
  const auto v = get(key);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("configuration key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string Config::to_ini() const {
  std::ostringstream os;
  os << "# resolved configuration\n";
  for (const auto& [section, entries] : sections_) {
    os << '\n' << '[' << section << "]\n";
    for (const auto& [name, value] : entries) os << name << " = " << value << '\n';
  }
  return os.str();
}

void Config::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_ini();
}

CaptureGeometry Config::geometry() const {
  CaptureGeometry g;
  g.fov_deg = get_double("render.fov_deg");
  g.plane_distance = get_double("render.plane_distance");
  if (get("render.light_intensity") != "default") g.light_intensity = get_double("render.light_intensity");
  g.validate();
  return g;
}

ModelConfig Config::model_config() const {
  ModelConfig m;
  const int d = get_int("model.latent_dim");
  m.decoder.latent_dim = m.encoder.latent_dim = d;
  m.decoder.widths = int_list("model.widths", get("model.widths"));
  m.decoder.noise_channels = get_int("model.noise_channels");
  m.decoder.skip_connections = get_bool("model.skip_connections");
  m.decoder.height_max = get_double("model.height_max");
  m.alpha_mode = alpha_mode_from_string(get("model.alpha_mode"));
  m.encoder.blocks = int_list("model.encoder_blocks", get("model.encoder_blocks"));
  m.encoder.base_width = get_int("model.encoder_width");
  m.encoder.input_width = get_int("model.input_width");
  m.encoder.input_height = get_int("model.input_height");
  m.extractor.width_scale = get_double("extractor.width_scale");
  m.extractor.native_resolution = get_int("extractor.native_resolution");
  m.extractor.seed = get_u64("extractor.seed");
  m.extractor.weights_path = get("extractor.weights");
  m.init_seed = derive_seed(get_u64("run.seed"), 1);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return m;
}

namespace {

TextureLossConfig loss_config(const Config& c) {
  TextureLossConfig l;
  l.n_crops = c.get_int("loss.n_crops");
  l.scale_min = c.get_double("loss.scale_min");
  l.scale_max = c.get_double("loss.scale_max");
  l.spectrum_weight = c.get_double("loss.spectrum_weight");
  l.fourier = c.get_bool("loss.fourier");
  if (l.n_crops < 1 || !(l.scale_min > 0) || l.scale_max < l.scale_min)
    throw ConfigError("loss: need n_crops >= 1 and 0 < scale_min <= scale_max");
  return l;
}

}  // namespace

TrainConfig Config::train_config() const {
  TrainConfig t;
  t.batch_size = get_int("train.batch_size");
  t.learning_rate = get_double("train.learning_rate");
  t.weight_decay = get_double("train.weight_decay");
  t.kl_weight = get_double("train.kl_weight");
  t.kl_warmup_fraction = get_double("train.kl_warmup_fraction");
  t.steps = get_int("train.steps");
  t.alignment = get_bool("train.alignment");
  t.log_every = get_int("train.log_every");
  t.dump_every = get_int("train.dump_every");
  t.checkpoint_every = get_int("train.checkpoint_every");
  t.margin = get_int("train.margin");
  t.loss = loss_config(*this);
  t.geometry = geometry();
  t.seed = derive_seed(get_u64("run.seed"), 2);
  if (t.steps < 0 || t.batch_size < 1) throw ConfigError("train: need steps >= 0 and batch_size >= 1");
  if (t.margin < 0 || t.margin % 16) throw ConfigError("train: margin must be a non-negative multiple of 16");
  return t;
}

FinetuneConfig Config::finetune_config() const {
  FinetuneConfig f;
  f.steps = get_int("finetune.steps");
  f.learning_rate = get_double("finetune.learning_rate");
  f.weight_decay = get_double("finetune.weight_decay");
  f.alignment = get_bool("finetune.alignment");
  f.margin = get_int("finetune.margin");
  f.loss = loss_config(*this);
  f.geometry = geometry();
  f.seed = derive_seed(get_u64("run.seed"), 3);
  if (f.steps < 0) throw ConfigError("finetune: steps must be non-negative");
  if (f.margin < 0 || f.margin % 16) throw ConfigError("finetune: margin must be a non-negative multiple of 16");
  return f;
}

SynthesisOptions Config::synthesis_options() const {
  SynthesisOptions s;
  s.tile = get_int("synthesis.tile");
  s.margin = get_int("synthesis.margin");
  s.reference_size = get_int("synthesis.reference_size");
  return s;
}

BenchmarkConfig Config::benchmark_config() const {
  BenchmarkConfig b;
  b.n_lights = get_int("evaluate.n_lights");
  b.cap_half_angle_deg = get_double("evaluate.cap_half_angle_deg");
  b.light_distance = get_double("evaluate.light_distance");
  b.realizations = get_int("evaluate.realizations");
  b.seed = derive_seed(get_u64("run.seed"), 4);
  b.flash = geometry();
  b.render.alpha_mode = alpha_mode_from_string(get("model.alpha_mode"));
  return b;
}

}  // namespace neuralmat
