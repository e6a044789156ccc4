#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "neuralmat/evalharness.hpp"
#include "neuralmat/material_space.hpp"
#include "neuralmat/training.hpp"

namespace neuralmat {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat sectioned key-value configuration (INI), resolved in layers:
/// built-in defaults, then a config file, then NEURALMAT_DATA /
/// NEURALMAT_CACHE, then explicit overrides. Keys are "section.name".
class Config {
 public:
  Config();

  void merge_file(const std::filesystem::path& path);
  void merge_env();
  void set(const std::string& key, const std::string& value);
  /// "section.name=value"
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  void write(const std::filesystem::path& path) const;
  std::string to_ini() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  FinetuneConfig finetune_config() const;
  SynthesisOptions synthesis_options() const;
  BenchmarkConfig benchmark_config() const;
  CaptureGeometry geometry() const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Independent seed streams derived from the single run seed.
std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream);

}  // namespace neuralmat
