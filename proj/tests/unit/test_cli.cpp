#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cdvae/cli.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using cdvae::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "codedvae");
  std::ostringstream out, err;
  const int rc = run(args, out, err);
  return {rc, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir) {
  const auto path = dir / "run.cfg";
  std::ofstream(path) << "model.kind = coded\n"
                         "model.M = 3\n"
                         "model.L = 2\n"
                         "model.encoder_hidden = 16\n"
                         "model.decoder_hidden = 16\n"
                         "train.epochs = 2\n"
                         "train.batch_size = 32\n"
                         "train.lr = 0.001\n"
                         "synth.count = 120\n"
                         "synth.test_count = 20\n"
                         "eval.trials = 40\n"
                         "eval.ll_samples = 10\n"
                         "eval.max_items = 10\n";
  return path;
}

}  // namespace

TEST(Cli, FullPipeline) {
  const auto dir = cdvae::test::scratch_dir("cli");
  const auto cfg = write_config(dir);
  const auto run_dir = dir / "run";

  auto r = invoke({"train", "--config", cfg.string(), "--out", run_dir.string(), "--set", "data.cache=" +
                                                                                       (dir / "s.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint.txt", "runlog.csv", "config.cfg", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "s.bin"));
  const auto manifest = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "train");
  EXPECT_EQ(slurp(run_dir / "runlog.csv").substr(0, 5), "epoch");

  const auto ckpt = (run_dir / "checkpoint.txt").string();
  r = invoke({"eval", "--checkpoint", ckpt, "--config", (run_dir / "config.cfg").string(), "--out",
              (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = nlohmann::json::parse(slurp(dir / "eval" / "metrics.json"));
  EXPECT_TRUE(metrics.contains("ber_map"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.csv"));

  r = invoke({"generate", "--checkpoint", ckpt, "--count", "4", "--out", (dir / "gen").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pgm = slurp(dir / "gen" / "samples.pgm");
  EXPECT_EQ(pgm.substr(0, 2), "P5");

  r = invoke({"reconstruct", "--checkpoint", ckpt, "--config", (run_dir / "config.cfg").string(), "--count", "3",
              "--out", (dir / "rec").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "rec" / "q_m.csv"));
}

TEST(Cli, TrainIsReproducible) {
  const auto dir = cdvae::test::scratch_dir("cli_repro");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.txt"), slurp(dir / "b" / "checkpoint.txt"));
}

TEST(Cli, BoundsDemo) {
  const auto dir = cdvae::test::scratch_dir("cli_bounds");
  const auto r = invoke({"bounds-demo", "--M", "2", "--samples", "300", "--observations", "200", "--out",
                         dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "gap.json"));
  EXPECT_LE(j["delta_sq"].get<double>(), j["bound_sq"].get<double>());
}

TEST(Cli, ErrorCodes) {
  const auto dir = cdvae::test::scratch_dir("cli_err");
  const auto cfg = write_config(dir);

  auto r = invoke({"train", "--config", cfg.string(), "--set", "model.colour=red"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error code=2 kind=config"), std::string::npos) << r.err;

  r = invoke({"eval", "--checkpoint", (dir / "missing.txt").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("kind=io"), std::string::npos) << r.err;

  std::ofstream(dir / "broken.txt") << "cdvae-checkpoint 1\nkind banana\n";
  r = invoke({"generate", "--checkpoint", (dir / "broken.txt").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 3);

  r = invoke({"frobnicate"});
  EXPECT_EQ(r.code, 2);

  r = invoke({"train", "--config", cfg.string(), "--set", "data.source=idx", "--set",
              "data.train_images=" + (dir / "none.idx").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, HelpAndVersion) {
  auto r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("bounds-demo"), std::string::npos);
  r = invoke({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_FALSE(r.out.empty());
}

TEST(Cli, GuessShapeAndPgm) {
  EXPECT_EQ(cdvae::cli::guess_shape(196), (std::pair<std::size_t, std::size_t>{14, 14}));
  EXPECT_EQ(cdvae::cli::guess_shape(10), (std::pair<std::size_t, std::size_t>{1, 10}));
  const auto dir = cdvae::test::scratch_dir("pgm");
  const std::vector<double> px{0.0, 0.5, 1.0, 0.25};
  cdvae::cli::write_pgm(dir / "a.pgm", 2, 2, px);
  const auto s = slurp(dir / "a.pgm");
  EXPECT_EQ(s.substr(0, 11), "P5\n2 2\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(s[11 + 2]), 255);
}
