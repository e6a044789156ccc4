#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuralmat/brdf.hpp"
#include "neuralmat/feature_stats.hpp"
#include "neuralmat/material_nets.hpp"
#include "neuralmat/rng.hpp"

namespace neuralmat {

struct ModelConfig {
  DecoderConfig decoder;
  EncoderConfig encoder;
  ExtractorConfig extractor;
  AlphaMode alpha_mode = AlphaMode::Squared;
  std::uint64_t init_seed = 0;

  int latent_dim() const { return decoder.latent_dim; }
  /// Throws std::invalid_argument on inconsistent sub-configurations.
  void validate() const;
};

/// Encoder, decoder and the frozen feature extractor, plus lineage.
///
/// `id` names this set of weights; `base_id` is the id of the checkpoint this
/// one descends from (equal to `id` for a root checkpoint).
struct Model {
  ModelConfig config;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  FeatureExtractor extractor{nullptr};
  std::string id;
  std::string base_id;

  static Model create(const ModelConfig& config);
  RenderOptions render_options() const { return {config.alpha_mode, 1.0}; }
};

struct TrainConfig {
  int batch_size = 4;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double kl_weight = 1e-3;
  double kl_warmup_fraction = 0.1;  ///< linear ramp of the KL weight over this share of `steps`
  int steps = 1000;
  TextureLossConfig loss;
  bool alignment = true;  ///< rotate the shading plane by the predicted angles
  std::uint64_t seed = 0;
  CaptureGeometry geometry;
  int log_every = 1;
  int dump_every = 0;        ///< 0 disables periodic PNG dumps
  int checkpoint_every = 0;  ///< 0 writes a checkpoint at the end only
  /// Noise is decoded this far beyond the image on every side and trimmed
  /// before shading, so the loss never sees zero-padding borders that tiled
  /// synthesis does not produce. Multiple of 16.
  int margin = 80;
};

struct FinetuneConfig {
  int steps = 1000;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  TextureLossConfig loss;
  bool alignment = true;  ///< shade with the predicted angles while tuning
  std::uint64_t seed = 0;
  CaptureGeometry geometry;
  int margin = 80;  ///< as TrainConfig::margin
};

struct LossBreakdown {
  int step = 0;
  double texture = 0.0;
  double kl = 0.0;
  double kl_weight = 0.0;
  double total = 0.0;
};

/// Raised when a step produces a non-finite loss; parameters are left untouched.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-form KL(N(mean, exp(log_variance)) || N(0, I)) summed over the last
/// dimension: 0.5 * sum(mean^2 + exp(lv) - lv - 1). Returns one value per row.
torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& log_variance);

/// Images as a batch tensor [N, 3, H, W] in sRGB.
torch::Tensor images_to_batch(const std::vector<Image>& images);

/// Decode noise of `seed` at the origin for each latent row; [N, 6, H, W].
/// With a margin the crop is decoded `margin` pixels larger on every side and
/// trimmed back to width x height.
torch::Tensor decode_from_seeds(Decoder& decoder, const torch::Tensor& z, const std::vector<std::uint64_t>& seeds,
                                int width, int height, int margin = 0);

/// Renders decoder maps [N, 6, H, W] to sRGB [N, 3, H, W], differentiably.
torch::Tensor render_srgb(const torch::Tensor& maps, const torch::Tensor& angles, const CaptureGeometry& geometry,
                          const RenderOptions& options);

class Trainer {
 public:
  Trainer(Model model, TrainConfig config);

  /// One optimisation step on images [B, 3, H, W] (sRGB). Throws NonFiniteLoss
  /// without applying the update.
  LossBreakdown train_step(const torch::Tensor& images);

  /// Runs the remaining steps over `dataset`, drawing batches from the run RNG.
  /// Writes metrics.csv, seeds.csv, image dumps and checkpoints under run_dir
  /// when it is non-empty.
  std::vector<LossBreakdown> train(const std::vector<Image>& dataset, const std::filesystem::path& run_dir = {},
                                   const std::function<void(const LossBreakdown&)>& on_step = {});

  double kl_weight_at(int step) const;

  void save_checkpoint(const std::filesystem::path& dir);
  /// Restores model, optimizer, step counter and RNG from a checkpoint.
  static Trainer resume(const std::filesystem::path& dir, std::optional<TrainConfig> config = std::nullopt);

  Model& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  int step() const { return step_; }
  const Rng& rng() const { return rng_; }
  /// Seeds drawn for every sample so far, for exact replay.
  struct SeedRecord {
    int step;
    int index;
    std::uint64_t noise_seed;
    std::uint64_t latent_seed;
    std::uint64_t crop_seed;
  };
  const std::vector<SeedRecord>& seed_log() const { return seed_log_; }
  torch::optim::Adam& optimizer() { return *optimizer_; }

 private:
  Model model_;
  TrainConfig config_;
  Rng rng_;
  int step_ = 0;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::vector<SeedRecord> seed_log_;
};

struct FinetuneResult {
  Decoder decoder{nullptr};
  torch::Tensor z;       ///< [1, d], encoder mean
  torch::Tensor angles;  ///< [1, 2], predicted, not applied to output
  std::vector<LossBreakdown> history;
};

/// Optimises a copy of the decoder (convolutions and style maps) against the
/// texture distance to one flash image; the encoder is frozen and the model
/// itself is not modified.
FinetuneResult finetune(Model& model, const Image& flash, const FinetuneConfig& config,
                        const std::function<void(const LossBreakdown&)>& on_step = {});

/// Encoder mean and angles for one image, resized to the encoder input.
EncoderOutput encode_image(Model& model, const Image& image);

}  // namespace neuralmat
