#include "cdvae/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>

#include "cdvae/checkpoint.hpp"
#include "cdvae/diagnostics.hpp"
#include "cdvae/errors.hpp"
#include "cdvae/training.hpp"
#include "cdvae/version.hpp"

namespace cdvae::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Failure {
  int code;
  std::string kind;
  std::string message;
};

Failure classify(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kParse:
      return {kDataError, "parse", e.what()};
    case ErrorKind::kShape:
      return {kDataError, "shape", e.what()};
    case ErrorKind::kNumeric:
      return {kNumericError, "numeric", e.what()};
    case ErrorKind::kCapacity:
      return {kConfigError, "capacity", e.what()};
    case ErrorKind::kDomain:
      return {kConfigError, "domain", e.what()};
    case ErrorKind::kState:
      return {kConfigError, "state", e.what()};
    case ErrorKind::kIo:
      return {kDataError, "io", e.what()};
    case ErrorKind::kConfig:
      break;
  }
  return {kConfigError, "config", e.what()};
}

int report(std::ostream& err, const Failure& f) {
  err << "error code=" << f.code << " kind=" << f.kind << " message=" << json(f.message).dump() << '\n';
  return f.code;
}

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr || *v == '\0') return fallback;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 20) {
    throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(kSeedEnv) + " out of range: '" + s + "'");
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is empty");
  if (!fs::exists(path)) throw IoError(std::string("missing ") + what + " " + path);
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg;
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    cfg = load_config(path);
  }
  for (const auto& s : sets) apply_override(cfg, s);
  return cfg;
}

fs::path prepare_out(const std::string& flag, const RunConfig& cfg) {
  fs::path dir = flag.empty() ? fs::path(cfg.output_dir) : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const RunConfig* cfg, json seeds, const std::vector<std::string>& outputs) {
  json j;
  j["version"] = kVersionString;
  j["subcommand"] = command;
  j["argv"] = args;
  j["config"] = cfg != nullptr ? json(to_text(*cfg)) : json(nullptr);
  j["seeds"] = std::move(seeds);
  j["outputs"] = outputs;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Model load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

void check_dims(const Model& m, const Dataset& d) {
  if (d.dim() != data_dim(m)) {
    throw ShapeError("data width " + std::to_string(d.dim()) + " does not match the checkpoint input width " +
                     std::to_string(data_dim(m)));
  }
}

std::vector<double> row_vec(const Batch& b, Eigen::Index i) {
  return {b.row(i).data(), b.row(i).data() + b.cols()};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::vector<std::string> sets;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  cfg.train.seed = env_seed(cfg.train.seed);
  cfg.train.validate();
  const fs::path dir = prepare_out(a.out, cfg);
  auto [train_set, test_set] = load_data(cfg);
  Model model = make_model(cfg.train, train_set.dim());
  const bool early = cfg.train.patience > 0 && test_set.size() > 0;
  const RunLog log = train(model, train_set, cfg.train, early ? &test_set : nullptr);
  save_checkpoint(dir / "checkpoint.txt", model, cfg.train.seed);
  log.write_csv(dir / "runlog.csv");
  write_text(dir / "config.cfg", to_text(cfg));
  write_manifest(dir, "train", argv, &cfg,
                 {{"train", cfg.train.seed}, {"synth", cfg.synth.seed}, {"eval", cfg.eval_seed}},
                 {"checkpoint.txt", "runlog.csv", "config.cfg"});
  const auto& last = log.rows.back();
  out << "trained " << model_kind_name(kind(model)) << " epochs=" << log.rows.size() << " elbo=" << last.elbo
      << " out=" << dir.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, config, out;
  std::vector<std::string> sets;
  long long trials = -1;
  long long ll_samples = -1;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  cfg.eval_seed = env_seed(cfg.eval_seed);
  if (a.trials >= 0) cfg.eval.trials = static_cast<std::size_t>(a.trials);
  if (a.ll_samples >= 0) cfg.eval.ll_samples = static_cast<std::size_t>(a.ll_samples);
  if (cfg.eval.trials == 0) throw ConfigError("eval.trials must be >= 1");
  const Model model = load_model(a.checkpoint);
  const fs::path dir = prepare_out(a.out, cfg);
  auto [train_set, test_set] = load_data(cfg);
  const Dataset& data = test_set.size() > 0 ? test_set : train_set;
  check_dims(model, data);
  const MetricReport r = evaluate(model, data.items, cfg.eval, Rng(cfg.eval_seed));
  write_text(dir / "metrics.json", r.to_json() + "\n");
  write_text(dir / "metrics.csv", MetricReport::csv_header() + "\n" + r.to_csv_row() + "\n");
  write_manifest(dir, "eval", argv, &cfg, {{"eval", cfg.eval_seed}, {"synth", cfg.synth.seed}},
                 {"metrics.json", "metrics.csv"});
  out << r.to_json() << '\n';
  return kOk;
}

struct GenerateArgs {
  std::string checkpoint, out = "out";
  std::size_t count = 16;
  std::uint64_t seed = 1;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const Model model = load_model(a.checkpoint);
  const std::uint64_t seed = env_seed(a.seed);
  if (a.count == 0) throw ConfigError("--count must be >= 1");
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  Rng rng(seed);
  std::vector<std::vector<double>> images;
  std::string messages;
  for (std::size_t i = 0; i < a.count; ++i) {
    const BitWord m = sample_prior_message(model, rng);
    images.push_back(generate(model, m, NoiseDraw::draw(latent_dim(model), rng)));
    for (std::size_t j = 0; j < m.size(); ++j) messages += static_cast<char>('0' + m[j]);
    messages += '\n';
  }
  const auto [h, w] = guess_shape(data_dim(model));
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(a.count))));
  write_pgm_grid(dir / "samples.pgm", images, h, w, cols);
  write_text(dir / "messages.txt", messages);
  write_manifest(dir, "generate", argv, nullptr, {{"generate", seed}}, {"samples.pgm", "messages.txt"});
  out << "generated " << a.count << " samples in " << dir.string() << '\n';
  return kOk;
}

struct ReconstructArgs {
  std::string checkpoint, config, out;
  std::vector<std::string> sets;
  std::size_t count = 8;
  std::uint64_t seed = 1;
};

int cmd_reconstruct(const ReconstructArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  const std::uint64_t seed = env_seed(a.seed);
  const Model model = load_model(a.checkpoint);
  const fs::path dir = prepare_out(a.out, cfg);
  auto [train_set, test_set] = load_data(cfg);
  const Dataset& data = test_set.size() > 0 ? test_set : train_set;
  check_dims(model, data);
  const std::size_t n = std::min(a.count, data.size());
  if (n == 0) throw ConfigError("--count must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<double>> originals, recons;
  std::string qdump;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = row_vec(data.items, static_cast<Eigen::Index>(i));
    Reconstruction r = reconstruct(model, x, NoiseDraw::draw(latent_dim(model), rng));
    for (std::size_t j = 0; j < r.q_m.size(); ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", r.q_m.prob(j));
      qdump += buf;
    }
    qdump += '\n';
    originals.push_back(std::move(x));
    recons.push_back(std::move(r.x));
  }
  const std::size_t h = data.height ? data.height : guess_shape(data.dim()).first;
  const std::size_t w = data.width ? data.width : guess_shape(data.dim()).second;
  write_pgm_grid(dir / "originals.pgm", originals, h, w, n);
  write_pgm_grid(dir / "reconstructions.pgm", recons, h, w, n);
  write_text(dir / "q_m.csv", qdump);
  write_manifest(dir, "reconstruct", argv, &cfg, {{"reconstruct", seed}, {"synth", cfg.synth.seed}},
                 {"originals.pgm", "reconstructions.pgm", "q_m.csv"});
  out << "reconstructed " << n << " items in " << dir.string() << '\n';
  return kOk;
}

struct BoundsArgs {
  std::size_t M = 3;
  std::size_t samples = 10000;
  std::size_t observations = 2000;
  double perturb = 0.5;
  std::uint64_t seed = 1;
  std::string out = "out";
};

int cmd_bounds(const BoundsArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const std::uint64_t seed = env_seed(a.seed);
  if (a.M == 0 || a.M > 4) throw CapacityError("--M must lie in [1, 4] for exact enumeration");
  if (!(a.perturb >= 0.0)) throw ConfigError("--perturb must be >= 0");
  fs::create_directories(a.out);
  const fs::path dir(a.out);

  const Rng root(seed);
  Rng init = root.split(0);
  ArchConfig arch{8, {16}, {16}};
  Model toy = make_uncoded(a.M, arch, kDefaultBeta, init);
  for (auto& layer : core(toy).decoder.params.layers()) layer.weight *= 3.0;
  Rng table_rng = root.split(1);
  const GapTable table = build_gap_table(toy, a.observations, a.samples, table_rng);

  Rng fam_rng = root.split(2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> qs;
  for (const auto& p : table.posterior) {
    std::vector<double> q(p.size());
    double total = 0.0;
    for (std::size_t m = 0; m < p.size(); ++m) {
      q[m] = std::max(p[m], 1e-300) * std::exp(a.perturb * gauss(fam_rng.engine()));
      total += q[m];
    }
    for (auto& v : q) v /= total;
    qs.push_back(std::move(q));
  }
  const GapEstimate g = gap_from_table(table, [&](std::size_t i, std::span<const double>) { return qs[i]; });

  json j = json::parse(gap_to_json(g));
  j["M"] = a.M;
  j["samples"] = a.samples;
  j["perturb"] = a.perturb;
  j["delta_sq"] = g.delta * g.delta;
  j["bound_sq"] = g.bound * g.bound;
  write_text(dir / "gap.json", j.dump(2) + "\n");
  write_manifest(dir, "bounds-demo", argv, nullptr, {{"bounds", seed}}, {"gap.json"});
  out << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

std::pair<std::size_t, std::size_t> guess_shape(std::size_t dim) {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (s * s == dim) return {s, s};
  return {1, dim};
}

void write_pgm(const fs::path& path, std::size_t width, std::size_t height, std::span<const double> pixels) {
  require_same_length(pixels.size(), width * height, "write_pgm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : pixels) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(b));
  }
}

void write_pgm_grid(const fs::path& path, const std::vector<std::vector<double>>& images, std::size_t height,
                    std::size_t width, std::size_t columns) {
  if (images.empty() || columns == 0) throw ShapeError("write_pgm_grid: nothing to write");
  const std::size_t rows = (images.size() + columns - 1) / columns;
  const std::size_t W = columns * (width + 1) + 1;
  const std::size_t H = rows * (height + 1) + 1;
  std::vector<double> canvas(W * H, 0.0);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_length(images[n].size(), height * width, "write_pgm_grid image");
    const std::size_t r0 = 1 + (n / columns) * (height + 1);
    const std::size_t c0 = 1 + (n % columns) * (width + 1);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) canvas[(r0 + r) * W + c0 + c] = images[n][r * width + c];
    }
  }
  write_pgm(path, W, H, canvas);
}

std::pair<Dataset, Dataset> load_data(const RunConfig& cfg) {
  if (cfg.data.source == DataSource::kSynthetic) {
    SyntheticSpec spec = cfg.synth;
    spec.count = cfg.synth.count + cfg.data.synth_test_count;
    spec.validate();
    Dataset all;
    bool cached = false;
    if (!cfg.data.cache.empty() && fs::exists(cfg.data.cache)) {
      std::uint64_t hash = 0;
      all = read_synthetic_cache(cfg.data.cache, &hash);
      cached = hash == spec.hash();
    }
    if (!cached) {
      all = synth_generate(spec);
      if (!cfg.data.cache.empty()) write_synthetic_cache(cfg.data.cache, spec, all);
    }
    return {slice(all, 0, cfg.synth.count), slice(all, cfg.synth.count, cfg.data.synth_test_count)};
  }

  auto load = [&](const std::string& images, const std::string& labels, std::size_t count) {
    require_file(images, "IDX image file");
    std::optional<fs::path> lab;
    if (!labels.empty()) {
      require_file(labels, "IDX label file");
      lab = labels;
    }
    Dataset d = read_idx(images, lab);
    if (cfg.data.downsample) d = downsample_2x2(d);
    if (count > 0) d = slice(d, 0, count);
    return d;
  };
  Dataset train_set = load(cfg.data.train_images, cfg.data.train_labels, cfg.data.train_count);
  Dataset test_set;
  if (!cfg.data.test_images.empty()) {
    test_set = load(cfg.data.test_images, cfg.data.test_labels, cfg.data.test_count);
  } else {
    test_set.height = train_set.height;
    test_set.width = train_set.width;
    test_set.items.resize(0, train_set.items.cols());
  }
  return {std::move(train_set), std::move(test_set)};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete VAEs with error-correcting codes on the latent bits", "codedvae"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersionString);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus run log");
  train_cmd->add_option("--config", ta.config, "key=value config file")->required();
  train_cmd->add_option("--set", ta.sets, "Override one config key (key=value)");
  train_cmd->add_option("--out", ta.out, "Output directory (default: output.dir)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate error rates, PSNR, entropy and log-likelihood");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--config", ea.config, "key=value config file");
  eval_cmd->add_option("--set", ea.sets, "Override one config key (key=value)");
  eval_cmd->add_option("--trials", ea.trials, "Generation-recovery trials");
  eval_cmd->add_option("--ll-samples", ea.ll_samples, "Importance samples per test item");
  eval_cmd->add_option("--out", ea.out, "Output directory (default: output.dir)");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Sample messages from the prior and decode them");
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--count", ga.count, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--seed", ga.seed, "Sampling seed")->capture_default_str();
  gen_cmd->add_option("--out", ga.out, "Output directory")->capture_default_str();

  ReconstructArgs ra;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct test items and dump q(m|x)");
  rec_cmd->add_option("--checkpoint", ra.checkpoint, "Checkpoint file")->required();
  rec_cmd->add_option("--config", ra.config, "key=value config file");
  rec_cmd->add_option("--set", ra.sets, "Override one config key (key=value)");
  rec_cmd->add_option("--count", ra.count, "Number of items")->capture_default_str();
  rec_cmd->add_option("--seed", ra.seed, "Sampling seed")->capture_default_str();
  rec_cmd->add_option("--out", ra.out, "Output directory (default: output.dir)");

  BoundsArgs ba;
  auto* bounds_cmd = app.add_subcommand("bounds-demo", "Check the accuracy-gap bound on an enumerable toy");
  bounds_cmd->add_option("--M", ba.M, "Message bits (1-4)")->capture_default_str();
  bounds_cmd->add_option("--samples", ba.samples, "Monte-Carlo latent draws per message")->capture_default_str();
  bounds_cmd->add_option("--observations", ba.observations, "Generated observations")->capture_default_str();
  bounds_cmd->add_option("--perturb", ba.perturb, "Log-scale perturbation of the true posterior")->capture_default_str();
  bounds_cmd->add_option("--seed", ba.seed, "Seed")->capture_default_str();
  bounds_cmd->add_option("--out", ba.out, "Output directory")->capture_default_str();

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersionString << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report(err, {kConfigError, "usage", e.what()});
  }

  const std::vector<std::string> argv(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    if (*train_cmd) return cmd_train(ta, argv, out);
    if (*eval_cmd) return cmd_eval(ea, argv, out);
    if (*gen_cmd) return cmd_generate(ga, argv, out);
    if (*rec_cmd) return cmd_reconstruct(ra, argv, out);
    return cmd_bounds(ba, argv, out);
  } catch (const Error& e) {
    return report(err, classify(e));
  } catch (const fs::filesystem_error& e) {
    return report(err, {kDataError, "io", e.what()});
  } catch (const std::exception& e) {
    return report(err, {1, "internal", e.what()});
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace cdvae::cli
