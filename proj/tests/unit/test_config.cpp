#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "neuralmat/config.hpp"

using namespace neuralmat;
namespace fs = std::filesystem;

namespace {

fs::path write_ini(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, DefaultsResolveToStructs) {
  Config c;
  const auto m = c.model_config();
  EXPECT_EQ(m.decoder.latent_dim, 64);
  EXPECT_EQ(m.decoder.widths, (std::vector<int>{32, 64, 128, 256, 256}));
  EXPECT_EQ(m.encoder.blocks, (std::vector<int>{3, 4, 6, 3}));
  EXPECT_EQ(m.encoder.input_width, 512);
  EXPECT_EQ(m.encoder.input_height, 384);
  const auto t = c.train_config();
  EXPECT_EQ(t.batch_size, 4);
  EXPECT_DOUBLE_EQ(t.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(t.kl_weight, 1e-3);
  EXPECT_EQ(t.loss.n_crops, 4);
  const auto f = c.finetune_config();
  EXPECT_DOUBLE_EQ(f.learning_rate, 1e-3);
  EXPECT_EQ(f.steps, 1000);
  EXPECT_EQ(c.synthesis_options().tile, 256);
  const auto b = c.benchmark_config();
  EXPECT_EQ(b.n_lights, 10);
  EXPECT_DOUBLE_EQ(b.cap_half_angle_deg, 60.0);
  EXPECT_DOUBLE_EQ(c.geometry().fov_deg, 45.0);
}

TEST(Config, SetAndAssignment) {
  Config c;
  c.set("train.steps", "12");
  EXPECT_EQ(c.get_int("train.steps"), 12);
  c.set_assignment(" loss.fourier = off ");
  EXPECT_FALSE(c.get_bool("loss.fourier"));
  EXPECT_THROW(c.set("train.nope", "1"), ConfigError);
  EXPECT_THROW(c.set("nodot", "1"), ConfigError);
  EXPECT_THROW(c.set_assignment("train.steps"), ConfigError);
  EXPECT_TRUE(c.has("model.widths"));
  EXPECT_FALSE(c.has("model.depth"));
}

TEST(Config, TypedGettersRejectGarbage) {
  Config c;
  c.set("train.steps", "12x");
  EXPECT_THROW(c.get_int("train.steps"), ConfigError);
  c.set("run.seed", "-3");
  EXPECT_THROW(c.get_u64("run.seed"), ConfigError);
  c.set("loss.fourier", "maybe");
  EXPECT_THROW(c.get_bool("loss.fourier"), ConfigError);
  c.set("train.learning_rate", "fast");
  EXPECT_THROW(c.get_double("train.learning_rate"), ConfigError);
  c.set("model.widths", "32,abc");
  EXPECT_THROW(c.model_config(), ConfigError);
}

TEST(Config, StructValidationSurfacesAsConfigError) {
  Config c;
  c.set("loss.scale_min", "4");
  c.set("loss.scale_max", "2");
  EXPECT_THROW(c.train_config(), ConfigError);
  Config d;
  d.set("train.batch_size", "0");
  EXPECT_THROW(d.train_config(), ConfigError);
  Config e;
  e.set("model.latent_dim", "0");
  EXPECT_THROW(e.model_config(), ConfigError);
}

TEST(Config, LayeringFileThenEnvThenOverride) {
  const auto p = write_ini("nm_layering.ini", "[train]\nsteps = 7\n[paths]\ndata = /from/file\n");
  ::setenv("NEURALMAT_DATA", "/from/env", 1);
  Config c;
  c.merge_file(p);
  EXPECT_EQ(c.get_int("train.steps"), 7);
  EXPECT_EQ(c.get("paths.data"), "/from/file");
  c.merge_env();
  EXPECT_EQ(c.get("paths.data"), "/from/env");
  c.set("paths.data", "/from/flag");
  EXPECT_EQ(c.get("paths.data"), "/from/flag");
  ::unsetenv("NEURALMAT_DATA");
  fs::remove(p);
}

TEST(Config, FileErrors) {
  Config c;
  EXPECT_THROW(c.merge_file("/nonexistent/cfg.ini"), ConfigError);
  const auto unknown = write_ini("nm_unknown.ini", "[train]\nsteppz = 3\n");
  EXPECT_THROW(c.merge_file(unknown), ConfigError);
  const auto bad = write_ini("nm_bad.ini", "[train\nsteps = 3\n");
  EXPECT_THROW(c.merge_file(bad), ConfigError);
  fs::remove(unknown);
  fs::remove(bad);
}

TEST(Config, WrittenIniReloadsIdentically) {
  Config c;
  c.set("train.steps", "33");
  c.set("model.widths", "8,8,16,16,16");
  const auto p = fs::temp_directory_path() / "nm_roundtrip.ini";
  c.write(p);
  Config d;
  d.merge_file(p);
  EXPECT_EQ(c.to_ini(), d.to_ini());
  EXPECT_EQ(c.sections(), d.sections());
  fs::remove(p);
}

TEST(Config, SeedStreamsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t run : {0ULL, 1ULL, 42ULL})
    for (std::uint64_t stream = 1; stream <= 6; ++stream) seen.insert(derive_seed(run, stream));
  EXPECT_EQ(seen.size(), 18u);
  EXPECT_EQ(derive_seed(42, 2), derive_seed(42, 2));
  Config c;
  c.set("run.seed", "42");
  EXPECT_EQ(c.train_config().seed, derive_seed(42, 2));
  EXPECT_EQ(c.finetune_config().seed, derive_seed(42, 3));
  EXPECT_EQ(c.model_config().init_seed, derive_seed(42, 1));
}

TEST(Config, LightIntensityDefaultAndOverride) {
  Config c;
  EXPECT_DOUBLE_EQ(c.geometry().light_intensity, CaptureGeometry{}.light_intensity);
  c.set("render.light_intensity", "3.5");
  EXPECT_DOUBLE_EQ(c.geometry().light_intensity, 3.5);
  c.set("render.fov_deg", "-1");
  EXPECT_ANY_THROW(c.geometry());
}
