#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "neuralmat/checkpoint.hpp"
#include "neuralmat/fixtures.hpp"
#include "neuralmat/training.hpp"
#include "tiny_model.hpp"

using namespace neuralmat;
using neuralmat::testing::tensors_equal;
using neuralmat::testing::tiny_model_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nm_training_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<Image> flash_images(int count, int w = 64, int h = 48) {
  std::vector<Image> out;
  for (const auto& f : make_fixtures(w, h, 3, count)) out.push_back(shade(f.maps, {}).srgb());
  return out;
}

TrainConfig tiny_train_config(int steps, std::uint64_t seed = 1) {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.steps = steps;
  tc.seed = seed;
  tc.loss.n_crops = 2;
  return tc;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

bool all_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!torch::equal(a[k], b[k])) return false;
  return true;
}

torch::Tensor probe_decode(Model& m) {
  torch::NoGradGuard ng;
  return decode_from_seeds(m.decoder, torch::ones({1, m.config.latent_dim()}), {5}, 32, 32);
}

}  // namespace

TEST(Kl, ClosedFormPoints) {
  EXPECT_EQ(kl_divergence(torch::zeros({1, 4}), torch::zeros({1, 4})).item<float>(), 0.0f);
  EXPECT_FLOAT_EQ(kl_divergence(torch::ones({1, 1}), torch::zeros({1, 1})).item<float>(), 0.5f);
  auto kl = kl_divergence(torch::tensor({{0.0, 1.0}, {2.0, 0.0}}), torch::tensor({{1.0, 0.0}, {0.0, -1.0}}));
  ASSERT_EQ(kl.size(0), 2);
  EXPECT_NEAR(kl[0].item<double>(), 0.5 * (std::exp(1.0) - 1 - 1) + 0.5, 1e-6);
  EXPECT_NEAR(kl[1].item<double>(), 0.5 * 4 + 0.5 * (std::exp(-1.0) + 1 - 1), 1e-6);
}

TEST(Kl, NonNegativeOnRandomInputs) {
  torch::manual_seed(1);
  auto kl = kl_divergence(torch::randn({100, 16}) * 3, torch::randn({100, 16}) * 3);
  EXPECT_GE(kl.min().item<float>(), 0.0f);
}

TEST(Kl, WarmupRamp) {
  ModelConfig mc = tiny_model_config();
  auto tc = tiny_train_config(100);
  Trainer t(Model::create(mc), tc);
  EXPECT_NEAR(t.kl_weight_at(0), 1e-3 / 10, 1e-12);
  EXPECT_NEAR(t.kl_weight_at(4), 1e-3 / 2, 1e-12);
  EXPECT_DOUBLE_EQ(t.kl_weight_at(9), 1e-3);
  EXPECT_DOUBLE_EQ(t.kl_weight_at(50), 1e-3);
  tc.kl_warmup_fraction = 0;
  Trainer u(Model::create(mc), tc);
  EXPECT_DOUBLE_EQ(u.kl_weight_at(0), 1e-3);
}

TEST(ModelConfig, ValidationAndCreateIsSeeded) {
  auto mc = tiny_model_config();
  mc.encoder.latent_dim = 9;
  EXPECT_THROW(mc.validate(), std::invalid_argument);
  mc = tiny_model_config();
  mc.encoder.input_width = 50;
  EXPECT_THROW(mc.validate(), std::invalid_argument);
  auto a = Model::create(tiny_model_config(3)), b = Model::create(tiny_model_config(3));
  auto c = Model::create(tiny_model_config(4));
  EXPECT_TRUE(tensors_equal(probe_decode(a), probe_decode(b)));
  EXPECT_FALSE(tensors_equal(probe_decode(a), probe_decode(c)));
  EXPECT_EQ(a.id, b.id);
  EXPECT_NE(a.id, c.id);
}

TEST(TrainConfig, RejectsBadRates) {
  auto mc = tiny_model_config();
  auto tc = tiny_train_config(1);
  tc.learning_rate = 0;
  EXPECT_THROW(Trainer(Model::create(mc), tc), std::invalid_argument);
  tc = tiny_train_config(1);
  tc.kl_weight = -1;
  EXPECT_THROW(Trainer(Model::create(mc), tc), std::invalid_argument);
  tc = tiny_train_config(1);
  tc.batch_size = 0;
  EXPECT_THROW(Trainer(Model::create(mc), tc), std::invalid_argument);
}

TEST(TrainStep, BookkeepingAndUpdates) {
  Trainer t(Model::create(tiny_model_config()), tiny_train_config(10));
  const auto extractor_before = snapshot(t.model().extractor->parameters());
  const auto decoder_before = snapshot(t.model().decoder->parameters());
  const auto encoder_before = snapshot(t.model().encoder->parameters());
  auto batch = images_to_batch(flash_images(2));
  const auto lb = t.train_step(batch);
  EXPECT_NEAR(lb.total, lb.texture + lb.kl_weight * lb.kl, 1e-6 * std::max(1.0, lb.total));
  EXPECT_GT(lb.texture, 0.0);
  EXPECT_GE(lb.kl, 0.0);
  EXPECT_EQ(lb.step, 0);
  EXPECT_EQ(t.step(), 1);
  EXPECT_EQ(t.seed_log().size(), 2u);
  EXPECT_TRUE(all_equal(extractor_before, snapshot(t.model().extractor->parameters())));
  EXPECT_FALSE(all_equal(decoder_before, snapshot(t.model().decoder->parameters())));
  EXPECT_FALSE(all_equal(encoder_before, snapshot(t.model().encoder->parameters())));
  EXPECT_THROW(t.train_step(torch::rand({1, 3, 32, 32})), std::invalid_argument);
}

TEST(TrainStep, IdenticalSeedsReproduceLosses) {
  auto data = flash_images(3);
  Trainer a(Model::create(tiny_model_config()), tiny_train_config(3, 9));
  Trainer b(Model::create(tiny_model_config()), tiny_train_config(3, 9));
  const auto ha = a.train(data), hb = b.train(data);
  ASSERT_EQ(ha.size(), 3u);
  for (std::size_t k = 0; k < ha.size(); ++k) {
    EXPECT_EQ(ha[k].texture, hb[k].texture);
    EXPECT_EQ(ha[k].kl, hb[k].kl);
  }
  Trainer c(Model::create(tiny_model_config()), tiny_train_config(3, 10));
  EXPECT_NE(c.train(data)[0].texture, ha[0].texture);
}

TEST(TrainStep, OverfitsOneImageWithoutKl) {
  // Per-step losses vary with the crop and noise seed, so compare window means.
  Trainer t(Model::create(tiny_model_config()), [] {
    TrainConfig tc;
    tc.batch_size = 1;
    tc.steps = 300;
    tc.kl_weight = 0.0;
    tc.learning_rate = 2e-3;
    tc.seed = 4;
    return tc;
  }());
  const auto batch = images_to_batch({shade(procedural_material("tiles", 64, 48, 1), {}).srgb()});
  double head = 0, tail = 0;
  for (int k = 0; k < 300; ++k) {
    const double loss = t.train_step(batch).texture;
    if (k < 20) head += loss / 20;
    if (k >= 280) tail += loss / 20;
  }
  EXPECT_LE(tail, 0.6 * head) << "first 20 mean " << head << ", last 20 mean " << tail;
}

TEST(TrainStep, NonFiniteLossIsRejectedWithoutSideEffects) {
  Trainer t(Model::create(tiny_model_config()), tiny_train_config(10));
  {
    torch::NoGradGuard ng;
    for (auto& p : t.model().encoder->named_parameters())
      if (p.key().rfind("posterior", 0) == 0) p.value().fill_(std::numeric_limits<float>::quiet_NaN());
  }
  const auto before = snapshot(t.model().decoder->parameters());
  const auto rng_before = t.rng().state();
  EXPECT_THROW(t.train_step(images_to_batch(flash_images(2))), NonFiniteLoss);
  EXPECT_EQ(t.step(), 0);
  EXPECT_EQ(t.rng().state(), rng_before);
  EXPECT_TRUE(t.seed_log().empty());
  EXPECT_TRUE(all_equal(before, snapshot(t.model().decoder->parameters())));
}

TEST(Train, WritesRunDirectory) {
  const auto dir = scratch_dir("run");
  auto tc = tiny_train_config(2);
  tc.dump_every = 1;
  Trainer t(Model::create(tiny_model_config()), tc);
  EXPECT_THROW(t.train({}, dir), std::invalid_argument);
  t.train(flash_images(1), dir);
  std::ifstream metrics(dir / "metrics.csv");
  std::string header, line;
  std::getline(metrics, header);
  EXPECT_EQ(header, "step,texture_loss,kl,total");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(fs::exists(dir / "seeds.csv"));
  EXPECT_TRUE(fs::exists(dir / "dumps" / "step_000001.png"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint" / "manifest.json"));
  EXPECT_NO_THROW(load_model(dir / "checkpoint"));
  fs::remove_all(dir);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto data = flash_images(2);
  Trainer full(Model::create(tiny_model_config()), tiny_train_config(4, 5));
  const auto ref = full.train(data);

  const auto dir = scratch_dir("resume");
  Trainer part(Model::create(tiny_model_config()), tiny_train_config(2, 5));
  part.train(data);
  part.save_checkpoint(dir);
  auto resumed = Trainer::resume(dir, tiny_train_config(4, 5));
  EXPECT_EQ(resumed.step(), 2);
  EXPECT_EQ(resumed.rng().state(), part.rng().state());
  const auto rest = resumed.train(data);
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_EQ(rest[0].step, 2);
  EXPECT_NEAR(rest[0].texture, ref[2].texture, 1e-6 * ref[2].texture);
  EXPECT_NEAR(rest[1].texture, ref[3].texture, 1e-6 * ref[3].texture);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripAndManifest) {
  const auto dir = scratch_dir("ckpt");
  auto m = Model::create(tiny_model_config());
  save_model(m, dir);
  auto loaded = load_model(dir);
  EXPECT_TRUE(tensors_equal(probe_decode(m), probe_decode(loaded)));
  EXPECT_EQ(loaded.config.latent_dim(), 8);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("schema").get<int>(), kSchemaVersion);
  EXPECT_EQ(j.at("latent_dim").get<int>(), 8);
  EXPECT_EQ(j.at("widths").get<std::vector<int>>(), (std::vector<int>{8, 8, 16, 16, 16}));
  EXPECT_EQ(j.at("alpha_mode").get<std::string>(), "squared");
  EXPECT_TRUE(j.contains("seeds"));
  EXPECT_EQ(j.at("extractor_weights_sha256").get<std::string>().size(), 64u);
  fs::remove_all(dir);
}

TEST(Checkpoint, DetectsCorruptionAndMissingFiles) {
  const auto dir = scratch_dir("corrupt");
  auto m = Model::create(tiny_model_config());
  save_model(m, dir);
  {
    std::ofstream f(dir / "decoder.pt", std::ios::app | std::ios::binary);
    f << "x";
  }
  EXPECT_THROW(load_model(dir), CheckpointError);
  fs::remove(dir / "decoder.pt");
  EXPECT_THROW(load_model(dir), CheckpointError);
  EXPECT_THROW(load_model(dir / "missing"), CheckpointError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ConfigJsonRoundTrip) {
  auto mc = tiny_model_config(11);
  mc.alpha_mode = AlphaMode::Linear;
  mc.decoder.skip_connections = false;
  const auto back = model_config_from_json(model_config_json(mc));
  EXPECT_EQ(back.decoder.widths, mc.decoder.widths);
  EXPECT_EQ(back.alpha_mode, AlphaMode::Linear);
  EXPECT_FALSE(back.decoder.skip_connections);
  EXPECT_EQ(back.init_seed, 11u);
  auto tc = tiny_train_config(17, 4);
  tc.loss.fourier = false;
  const auto tb = train_config_from_json(train_config_json(tc));
  EXPECT_EQ(tb.steps, 17);
  EXPECT_EQ(tb.seed, 4u);
  EXPECT_FALSE(tb.loss.fourier);
}

TEST(Finetune, FreezeContract) {
  auto m = Model::create(tiny_model_config());
  const auto enc_before = snapshot(m.encoder->parameters());
  const auto dec_before = snapshot(m.decoder->parameters());
  FinetuneConfig fc;
  fc.steps = 3;
  fc.loss.n_crops = 2;
  const auto flash = flash_images(1)[0];
  const auto r = finetune(m, flash, fc);
  EXPECT_TRUE(all_equal(enc_before, snapshot(m.encoder->parameters())));
  EXPECT_TRUE(all_equal(dec_before, snapshot(m.decoder->parameters())));
  EXPECT_FALSE(all_equal(dec_before, snapshot(r.decoder->parameters())));
  EXPECT_EQ(r.history.size(), 3u);
  EXPECT_TRUE(torch::equal(r.z, encode_image(m, flash).mean));
  EXPECT_EQ(r.angles.sizes(), (std::vector<int64_t>{1, 2}));
}

TEST(Finetune, ZeroStepsReturnsCheckpointDecoder) {
  auto m = Model::create(tiny_model_config());
  FinetuneConfig fc;
  fc.steps = 0;
  const auto r = finetune(m, flash_images(1)[0], fc);
  EXPECT_TRUE(all_equal(snapshot(m.decoder->parameters()), snapshot(r.decoder->parameters())));
  fc.steps = -1;
  EXPECT_THROW(finetune(m, flash_images(1)[0], fc), std::invalid_argument);
}

TEST(EncodeImage, DeterministicAndResizes) {
  auto m = Model::create(tiny_model_config());
  const auto img = flash_images(1, 128, 100)[0];
  const auto a = encode_image(m, img), b = encode_image(m, img);
  EXPECT_TRUE(torch::equal(a.mean, b.mean));
  EXPECT_EQ(a.mean.size(1), 8);
  const auto other = flash_images(2, 128, 100)[1];
  EXPECT_FALSE(torch::equal(a.mean, encode_image(m, other).mean));
}
