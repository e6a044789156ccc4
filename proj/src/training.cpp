#include "neuralmat/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "neuralmat/checkpoint.hpp"
#include "neuralmat/hash.hpp"
#include "neuralmat/render_op.hpp"

namespace neuralmat {

namespace fs = std::filesystem;

void ModelConfig::validate() const {
  if (decoder.latent_dim < 1 || decoder.latent_dim != encoder.latent_dim)
    throw std::invalid_argument("ModelConfig: encoder and decoder latent_dim must agree and be positive");
  if (decoder.widths.size() != DecoderImpl::kLevels)
    throw std::invalid_argument("ModelConfig: decoder needs five widths");
  for (int w : decoder.widths)
    if (w < 1) throw std::invalid_argument("ModelConfig: decoder widths must be positive");
  if (decoder.noise_channels < 1) throw std::invalid_argument("ModelConfig: noise_channels must be positive");
  if (!(decoder.height_max > 0)) throw std::invalid_argument("ModelConfig: height_max must be positive");
  if (encoder.input_width % DecoderImpl::kSizeMultiple || encoder.input_height % DecoderImpl::kSizeMultiple)
    throw std::invalid_argument("ModelConfig: encoder input size must be a multiple of 16");
  if (encoder.blocks.empty() || encoder.base_width < 1)
    throw std::invalid_argument("ModelConfig: encoder needs stages and a positive base width");
  if (extractor.native_resolution < kMinCroppableSize || !(extractor.width_scale > 0))
    throw std::invalid_argument("ModelConfig: invalid feature extractor configuration");
}

Model Model::create(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  torch::manual_seed(config.init_seed);
  m.encoder = Encoder(config.encoder);
  m.decoder = Decoder(config.decoder);
  m.extractor = FeatureExtractor(config.extractor);
  m.extractor->eval();
  const std::string text = model_config_json(config) + std::to_string(config.init_seed);
  m.id = "init-" + sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()}).substr(0, 16);
  m.base_id = m.id;
  return m;
}

torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& log_variance) {
  return 0.5 * (mean.pow(2) + log_variance.exp() - log_variance - 1.0).sum(-1);
}

torch::Tensor images_to_batch(const std::vector<Image>& images) {
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& img : images) ts.push_back(image_to_tensor(to_rgb(img)));
  return torch::stack(ts);
}

torch::Tensor decode_from_seeds(Decoder& decoder, const torch::Tensor& z, const std::vector<std::uint64_t>& seeds,
                                int width, int height, int margin) {
  if (margin < 0 || margin % DecoderImpl::kSizeMultiple)
    throw std::invalid_argument("decode_from_seeds: margin must be a non-negative multiple of 16");
  std::vector<torch::Tensor> noise;
  for (auto s : seeds) {
    NoiseField field(s, decoder->config().noise_channels);
    noise.push_back(noise_to_tensor(field.sample_crop({-margin, -margin}, {width + 2 * margin, height + 2 * margin})));
  }
  auto maps = decoder->forward(torch::cat(noise), z);
  if (margin == 0) return maps;
  return maps.slice(2, margin, margin + height).slice(3, margin, margin + width);
}

torch::Tensor render_srgb(const torch::Tensor& maps, const torch::Tensor& angles, const CaptureGeometry& geometry,
                          const RenderOptions& options) {
  return srgb_encode(render_maps(maps, angles, geometry, options));
}

namespace {

Image fit_to_encoder(const Image& img, const EncoderConfig& cfg) {
  auto rgb = to_rgb(img);
  if (rgb.width == cfg.input_width && rgb.height == cfg.input_height) return rgb;
  return center_crop_resize(rgb, cfg.input_width, cfg.input_height);
}

void check_finite(double texture, double kl, int step, const EncoderOutput& out) {
  if (std::isfinite(texture) && std::isfinite(kl)) return;
  std::ostringstream os;
  os << "non-finite loss at step " << step << ": texture=" << texture << " kl=" << kl;
  if (out.mean.defined())
    os << " |mean|max=" << out.mean.abs().max().item<double>()
       << " log_variance range=[" << out.log_variance.min().item<double>() << ", "
       << out.log_variance.max().item<double>() << "]";
  throw NonFiniteLoss(os.str());
}

std::vector<torch::Tensor> trainable(Model& m) {
  auto params = m.encoder->parameters();
  auto dec = m.decoder->parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  return params;
}

}  // namespace

Trainer::Trainer(Model model, TrainConfig config) : model_(std::move(model)), config_(std::move(config)), rng_(config_.seed) {
  if (config_.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(config_.learning_rate > 0) || config_.weight_decay < 0 || config_.kl_weight < 0)
    throw std::invalid_argument("TrainConfig: rates must be positive and kl_weight non-negative");
  if (config_.margin < 0 || config_.margin % DecoderImpl::kSizeMultiple)
    throw std::invalid_argument("TrainConfig: margin must be a non-negative multiple of 16");
  optimizer_ = std::make_unique<torch::optim::Adam>(
      trainable(model_), torch::optim::AdamOptions(config_.learning_rate).weight_decay(config_.weight_decay));
}

double Trainer::kl_weight_at(int step) const {
  const double warm = config_.kl_warmup_fraction * config_.steps;
  if (warm <= 0) return config_.kl_weight;
  return config_.kl_weight * std::min(1.0, (step + 1) / warm);
}

LossBreakdown Trainer::train_step(const torch::Tensor& images) {
  const auto& ecfg = model_.config.encoder;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != ecfg.input_height ||
      images.size(3) != ecfg.input_width)
    throw std::invalid_argument("train_step: images must be [B, 3, " + std::to_string(ecfg.input_height) + ", " +
                                std::to_string(ecfg.input_width) + "]");
  const auto rng_before = rng_.state();
  const auto log_before = seed_log_.size();
  const int b = static_cast<int>(images.size(0));

  model_.encoder->train();
  model_.decoder->train();
  std::vector<std::uint64_t> noise_seeds, crop_seeds;
  std::vector<torch::Tensor> zs;
  auto out = model_.encoder->forward(images);
  for (int i = 0; i < b; ++i) {
    SeedRecord rec{step_, i, rng_.next_u64(), rng_.next_u64(), rng_.next_u64()};
    seed_log_.push_back(rec);
    noise_seeds.push_back(rec.noise_seed);
    crop_seeds.push_back(rec.crop_seed);
    zs.push_back(reparameterize(out.mean.slice(0, i, i + 1), out.log_variance.slice(0, i, i + 1), rec.latent_seed));
  }
  auto maps = decode_from_seeds(model_.decoder, torch::cat(zs), noise_seeds, ecfg.input_width, ecfg.input_height,
                                config_.margin);
  if (!torch::isfinite(maps).all().item<bool>()) {
    rng_.set_state(rng_before);
    seed_log_.resize(log_before);
    check_finite(std::numeric_limits<double>::quiet_NaN(), 0.0, step_, out);
  }
  auto render = render_srgb(maps, config_.alignment ? out.angles : torch::Tensor(), config_.geometry,
                            model_.render_options());
  torch::Tensor texture = torch::zeros({});
  for (int i = 0; i < b; ++i)
    texture = texture + texture_distance(model_.extractor, render[i], images[i], config_.loss, crop_seeds[i]);
  texture = texture / b;
  auto kl = kl_divergence(out.mean, out.log_variance).mean();
  const double beta = kl_weight_at(step_);
  auto total = texture + beta * kl;

  LossBreakdown lb{step_, texture.item<double>(), kl.item<double>(), beta, 0.0};
  try {
    check_finite(lb.texture, lb.kl, step_, out);
  } catch (...) {
    rng_.set_state(rng_before);
    seed_log_.resize(log_before);
    throw;
  }
  lb.total = total.item<double>();

  optimizer_->zero_grad();
  total.backward();
  optimizer_->step();
  ++step_;
  return lb;
}

std::vector<LossBreakdown> Trainer::train(const std::vector<Image>& dataset, const fs::path& run_dir,
                                          const std::function<void(const LossBreakdown&)>& on_step) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  std::vector<torch::Tensor> images;
  for (const auto& img : dataset) images.push_back(image_to_tensor(fit_to_encoder(img, model_.config.encoder)));

  std::ofstream metrics, seeds;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    const auto mode = step_ > 0 ? std::ios::app : std::ios::trunc;
    metrics.open(run_dir / "metrics.csv", std::ios::out | mode);
    seeds.open(run_dir / "seeds.csv", std::ios::out | mode);
    if (!metrics || !seeds) throw IoError("cannot write logs in " + run_dir.string());
    if (step_ == 0) {
      metrics << "step,texture_loss,kl,total\n";
      seeds << "step,index,noise_seed,latent_seed,crop_seed\n";
    }
    metrics.precision(9);
  }

  std::vector<LossBreakdown> history;
  const auto n = static_cast<std::uint64_t>(images.size());
  while (step_ < config_.steps) {
    std::vector<torch::Tensor> batch;
    for (int i = 0; i < config_.batch_size; ++i) batch.push_back(images[rng_.next_u64() % n]);
    const auto log_before = seed_log_.size();
    auto lb = train_step(torch::stack(batch));
    history.push_back(lb);
    if (on_step) on_step(lb);
    if (metrics.is_open()) {
      if (config_.log_every > 0 && lb.step % config_.log_every == 0)
        metrics << lb.step << ',' << lb.texture << ',' << lb.kl << ',' << lb.total << '\n';
      for (auto k = log_before; k < seed_log_.size(); ++k) {
        const auto& r = seed_log_[k];
        seeds << r.step << ',' << r.index << ',' << r.noise_seed << ',' << r.latent_seed << ',' << r.crop_seed << '\n';
      }
      if (config_.dump_every > 0 && step_ % config_.dump_every == 0) {
        torch::NoGradGuard no_grad;
        model_.encoder->eval();
        auto enc = model_.encoder->forward(images[0].unsqueeze(0));
        auto maps = decode_from_seeds(model_.decoder, enc.mean, {0}, images[0].size(2), images[0].size(1),
                                      config_.margin);
        auto srgb = render_srgb(maps, torch::Tensor(), config_.geometry, model_.render_options());
        fs::create_directories(run_dir / "dumps");
        char name[32];
        std::snprintf(name, sizeof name, "step_%06d.png", step_);
        write_png(run_dir / "dumps" / name, tensor_to_image(srgb[0]));
      }
      if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0)
        save_checkpoint(run_dir / "checkpoint");
    }
  }
  if (!run_dir.empty()) save_checkpoint(run_dir / "checkpoint");
  return history;
}

void Trainer::save_checkpoint(const fs::path& dir) {
  CheckpointState state{step_, rng_.state(), train_config_json(config_)};
  save_model(model_, dir, state, optimizer_.get());
}

Trainer Trainer::resume(const fs::path& dir, std::optional<TrainConfig> config) {
  CheckpointState state;
  Model model = load_model(dir, &state);
  TrainConfig cfg = config ? *config : train_config_from_json(state.train_config);
  Trainer t(std::move(model), cfg);
  if (fs::exists(dir / "optimizer.pt")) load_optimizer(dir, *t.optimizer_);
  t.step_ = state.step;
  t.rng_.set_state(state.rng_state);
  return t;
}

EncoderOutput encode_image(Model& model, const Image& image) {
  torch::NoGradGuard no_grad;
  model.encoder->eval();
  auto x = image_to_tensor(fit_to_encoder(image, model.config.encoder)).unsqueeze(0);
  return model.encoder->forward(x);
}

FinetuneResult finetune(Model& model, const Image& flash, const FinetuneConfig& config,
                        const std::function<void(const LossBreakdown&)>& on_step) {
  if (config.steps < 0) throw std::invalid_argument("finetune: steps must be non-negative");
  if (!(config.learning_rate > 0)) throw std::invalid_argument("finetune: learning_rate must be positive");
  if (config.margin < 0 || config.margin % DecoderImpl::kSizeMultiple)
    throw std::invalid_argument("finetune: margin must be a non-negative multiple of 16");
  const auto& ecfg = model.config.encoder;
  auto target = image_to_tensor(fit_to_encoder(flash, ecfg));
  auto enc = encode_image(model, flash);

  FinetuneResult result;
  result.z = enc.mean.detach().clone();
  result.angles = enc.angles.detach().clone();
  result.decoder = clone_decoder(model.decoder);
  result.decoder->train();
  torch::optim::Adam opt(result.decoder->parameters(),
                         torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  Rng rng(config.seed);
  const auto angles = config.alignment ? result.angles : torch::Tensor();
  for (int step = 0; step < config.steps; ++step) {
    const auto noise_seed = rng.next_u64();
    const auto crop_seed = rng.next_u64();
    auto maps = decode_from_seeds(result.decoder, result.z, {noise_seed}, ecfg.input_width, ecfg.input_height,
                                  config.margin);
    auto render = render_srgb(maps, angles, config.geometry, model.render_options());
    auto loss = texture_distance(model.extractor, render[0], target, config.loss, crop_seed);
    LossBreakdown lb{step, loss.item<double>(), 0.0, 0.0, 0.0};
    check_finite(lb.texture, 0.0, step, {});
    lb.total = lb.texture;
    opt.zero_grad();
    loss.backward();
    opt.step();
    result.history.push_back(lb);
    if (on_step) on_step(lb);
  }
  result.decoder->eval();
  return result;
}

}  // namespace neuralmat
