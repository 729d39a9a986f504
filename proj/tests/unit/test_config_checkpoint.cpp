#include <gtest/gtest.h>

#include <sstream>

#include "cdvae/checkpoint.hpp"
#include "cdvae/config.hpp"
#include "cdvae/errors.hpp"
#include "test_support.hpp"

using namespace cdvae;

TEST(Config, ParsesKnownKeys) {
  const auto c = parse_config(
      "# comment\n"
      "model.kind = hier\n"
      "model.M = 4\n"
      "model.L = 3\n"
      "model.L2 = 2\n"
      "model.encoder_hidden = 32, 16\n"
      "train.lr = 0.001\n"
      "train.objective = iwae\n"
      "train.iwae_k = 5\n"
      "data.downsample = true\n"
      "\n"
      "output.dir = runs/a\n");
  EXPECT_EQ(c.train.kind, ModelKind::kHier);
  EXPECT_EQ(c.train.info_bits, 4u);
  EXPECT_EQ(c.train.repeat, 3u);
  EXPECT_EQ(c.train.repeat2, 2u);
  EXPECT_EQ(c.train.encoder_hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.001);
  EXPECT_EQ(c.train.objective, Objective::kIwae);
  EXPECT_TRUE(c.data.downsample);
  EXPECT_EQ(c.output_dir, "runs/a");
}

TEST(Config, StrictErrors) {
  EXPECT_THROW(parse_config("model.colour = red\n"), ConfigError);
  EXPECT_THROW(parse_config("model.M = 3\nmodel.M = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("model.M = three\n"), ConfigError);
  EXPECT_THROW(parse_config("model.M 3\n"), ConfigError);
  EXPECT_THROW(parse_config("train.lr = 1e-3x\n"), ConfigError);
  EXPECT_THROW(parse_config("data.downsample = maybe\n"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  RunConfig c;
  apply_override(c, "model.M=7");
  apply_override(c, "synth.noise = 0.125");
  apply_override(c, "model.beta=12.5");
  const auto text = to_text(c);
  const auto back = parse_config(text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.train.info_bits, 7u);
  EXPECT_DOUBLE_EQ(back.synth.noise_scale, 0.125);
  EXPECT_THROW(apply_override(c, "nope=1"), ConfigError);
  EXPECT_GT(config_keys().size(), 30u);
}

class CheckpointRoundTrip : public ::testing::TestWithParam<ModelKind> {};

TEST_P(CheckpointRoundTrip, ExactParameters) {
  Model m = test::toy_model(GetParam(), 2, 3);
  core(m).prior.nu = 0.3;
  std::stringstream ss;
  write_checkpoint(ss, m, 42);
  std::uint64_t seed = 0;
  const Model back = read_checkpoint(ss, &seed);
  EXPECT_EQ(seed, 42u);
  EXPECT_EQ(kind(back), GetParam());
  EXPECT_EQ(flatten_params(back), flatten_params(m));
  EXPECT_EQ(core(back).encoder.plan, core(m).encoder.plan);
  EXPECT_DOUBLE_EQ(core(back).prior.nu, 0.3);
  EXPECT_DOUBLE_EQ(core(back).smoothing.beta(), 15.0);
  EXPECT_EQ(latent_dim(back), latent_dim(m));
}

INSTANTIATE_TEST_SUITE_P(Kinds, CheckpointRoundTrip,
                         ::testing::Values(ModelKind::kUncoded, ModelKind::kCoded, ModelKind::kHier));

TEST(Checkpoint, CorruptInputs) {
  const Model m = test::toy_model(ModelKind::kCoded, 2, 2);
  std::stringstream ss;
  write_checkpoint(ss, m);
  const std::string good = ss.str();

  std::istringstream wrong_header("cdvae-checkpoint 9\n");
  EXPECT_THROW(read_checkpoint(wrong_header), ParseError);

  std::istringstream truncated(good.substr(0, good.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), ParseError);

  std::string bad = good;
  bad.replace(bad.find("values"), 6, "valuez");
  std::istringstream tampered(bad);
  EXPECT_THROW(read_checkpoint(tampered), ParseError);

  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.txt"), IoError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = test::scratch_dir("ckpt");
  const Model m = test::toy_model(ModelKind::kHier, 2, 2);
  save_checkpoint(dir / "c.txt", m, 5);
  EXPECT_EQ(flatten_params(load_checkpoint(dir / "c.txt")), flatten_params(m));
}
