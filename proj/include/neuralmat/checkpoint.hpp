#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "neuralmat/training.hpp"

namespace neuralmat {

constexpr int kSchemaVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training progress stored next to the weights.
struct CheckpointState {
  int step = 0;
  std::uint64_t rng_state = 0;
  std::string train_config;  ///< JSON text of the TrainConfig in effect
};

/// Writes manifest.json, encoder.pt, decoder.pt, extractor.pt (and
/// optimizer.pt when given) plus checksums.json into `dir`. Assigns the model
/// id from the weight hashes when it has none.
void save_model(Model& model, const std::filesystem::path& dir, const CheckpointState& state = {},
                torch::optim::Optimizer* optimizer = nullptr);

/// Loads and checksum-verifies a checkpoint; throws CheckpointError on
/// missing files, digest mismatch or unsupported schema.
Model load_model(const std::filesystem::path& dir, CheckpointState* state = nullptr);
void load_optimizer(const std::filesystem::path& dir, torch::optim::Optimizer& optimizer);

/// SHA-256 of every file named in checksums.json, compared to the record.
void verify_checksums(const std::filesystem::path& dir);
std::map<std::string, std::string> write_checksums(const std::filesystem::path& dir,
                                                   const std::vector<std::string>& files);

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

void save_decoder(Decoder& decoder, const std::filesystem::path& path);
void load_decoder(Decoder& decoder, const std::filesystem::path& path);

}  // namespace neuralmat
