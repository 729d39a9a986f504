#include "cdvae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cdvae/errors.hpp"

namespace cdvae {

namespace {

// Independent streams derived from the run seed.
enum Stream : std::uint64_t { kInitStream = 0, kShuffleStream = 1, kNoiseStream = 2, kEvalStream = 3 };

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_kind(const Model& m, ModelKind want, const char* fn) {
  if (kind(m) != want) throw ConfigError(std::string(fn) + ": wrong model kind " + model_kind_name(kind(m)));
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.lr must be finite and >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("model.beta must be positive");
  if (info_bits == 0 || repeat == 0 || repeat2 == 0) throw ConfigError("model dimensions must be positive");
  if (!(prior_nu > 0.0 && prior_nu < 1.0)) throw ConfigError("model.nu must lie in (0, 1)");
  if (encoder_hidden.empty() || decoder_hidden.empty()) throw ConfigError("model needs at least one hidden layer");
  for (auto h : encoder_hidden) {
    if (h == 0) throw ConfigError("model.encoder_hidden widths must be positive");
  }
  for (auto h : decoder_hidden) {
    if (h == 0) throw ConfigError("model.decoder_hidden widths must be positive");
  }
  if (objective == Objective::kIwae && iwae_k == 0) throw ConfigError("train.iwae_k must be >= 1");
}

Model make_model(const TrainConfig& cfg, std::size_t data_dim) {
  cfg.validate();
  ArchConfig arch{data_dim, cfg.encoder_hidden, cfg.decoder_hidden};
  Rng rng = Rng(cfg.seed).split(kInitStream);
  Model m = [&]() -> Model {
    switch (cfg.kind) {
      case ModelKind::kUncoded:
        return make_uncoded(cfg.info_bits, arch, cfg.beta, rng);
      case ModelKind::kCoded:
        return make_coded(CodeSpec(cfg.info_bits, cfg.repeat), arch, cfg.beta, rng);
      case ModelKind::kHier:
        return make_hier(CodeSpec(cfg.info_bits, cfg.repeat), CodeSpec(cfg.info_bits, cfg.repeat2), arch, cfg.beta,
                         rng);
    }
    throw ConfigError("unknown model kind");
  }();
  core(m).prior.nu = cfg.prior_nu;
  return m;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  require_same_length(params.size(), grads.size(), "adam_step");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require_same_length(state.m.size(), params.size(), "adam_step state");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i) + "; step rejected");
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + state.eps);
  }
}

std::string RunLog::to_csv(bool with_time) const {
  std::ostringstream out;
  out << kHeader << '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.epoch, r.elbo, r.recon, r.kl, r.kl2,
                  r.grad_norm, with_time ? r.seconds : 0.0);
    out << buf;
  }
  return out.str();
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run log " + path.string());
  out << to_csv();
}

Batch draw_noise(Eigen::Index rows, Eigen::Index width, Rng& rng) {
  Batch rho(rows, width);
  for (Eigen::Index i = 0; i < rho.size(); ++i) rho.data()[i] = std::clamp(rng.uniform(), kNoiseClip, 1.0 - kNoiseClip);
  return rho;
}

ElboParts mean_elbo(const Model& model, const Batch& x, std::uint64_t seed, std::size_t batch_size) {
  if (x.rows() == 0) throw ShapeError("mean_elbo: empty data");
  if (batch_size == 0) throw DomainError("mean_elbo: batch size must be >= 1");
  Rng rng(seed);
  const auto Z = static_cast<Eigen::Index>(latent_dim(model));
  ElboParts acc;
  const auto bs = static_cast<Eigen::Index>(batch_size);
  for (Eigen::Index start = 0; start < x.rows(); start += bs) {
    const Eigen::Index n = std::min(bs, x.rows() - start);
    const Batch xb = x.middleRows(start, n);
    const BatchElbo e = elbo_batch(model, xb, draw_noise(n, Z, rng));
    const auto w = static_cast<double>(n);
    acc.elbo += e.mean.elbo * w;
    acc.recon += e.mean.recon * w;
    acc.kl += e.mean.kl * w;
    acc.kl2 += e.mean.kl2 * w;
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  acc.elbo *= inv;
  acc.recon *= inv;
  acc.kl *= inv;
  acc.kl2 *= inv;
  return acc;
}

RunLog train(Model& model, const Dataset& data, const TrainConfig& cfg, const Dataset* heldout) {
  cfg.validate();
  if (data.size() == 0) throw ShapeError("train: empty dataset");
  if (data.dim() != data_dim(model)) {
    throw ShapeError("train: data width " + std::to_string(data.dim()) + " != model input " +
                     std::to_string(data_dim(model)));
  }
  const Rng root(cfg.seed);
  const Rng shuffle_root = root.split(kShuffleStream);
  Rng noise_rng = root.split(kNoiseStream);
  const auto Z = static_cast<Eigen::Index>(latent_dim(model));

  AdamState adam;
  std::vector<double> flat = flatten_params(model);
  RunLog log;

  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = batch_iter(data, cfg.batch_size, shuffle_root.split(epoch).seed());
    RunRow row;
    row.epoch = epoch;
    double grad_norm_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch xb = gather_rows(data.items, batches[b]);
      const auto n = xb.rows();
      ModelGrads g;
      ElboParts parts;
      try {
        if (cfg.objective == Objective::kElbo) {
          parts = elbo_batch(model, xb, draw_noise(n, Z, noise_rng), &g).mean;
        } else {
          std::vector<Batch> rho;
          rho.reserve(cfg.iwae_k);
          for (std::size_t s = 0; s < cfg.iwae_k; ++s) rho.push_back(draw_noise(n, Z, noise_rng));
          parts.elbo = iwae_batch(model, xb, rho, &g).mean;
        }
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " +
                           e.what());
      }
      if (!std::isfinite(parts.elbo)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
      }
      // The loss is the negated objective.
      std::vector<double> grad = flatten_grads(g);
      for (auto& v : grad) v = -v;
      grad_norm_sum += l2_norm(grad);
      try {
        adam_step(flat, grad, adam, cfg.learning_rate);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + e.what());
      }
      assign_params(model, flat);

      const auto w = static_cast<double>(n);
      row.elbo += parts.elbo * w;
      row.recon += parts.recon * w;
      row.kl += parts.kl * w;
      row.kl2 += parts.kl2 * w;
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    row.elbo *= inv;
    row.recon *= inv;
    row.kl *= inv;
    row.kl2 *= inv;
    row.grad_norm = grad_norm_sum / static_cast<double>(batches.size());
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.rows.push_back(row);

    if (cfg.patience > 0 && heldout != nullptr) {
      const double score = mean_elbo(model, heldout->items, root.split(kEvalStream).seed()).elbo;
      if (score > best) {
        best = score;
        best_params = flat;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        assign_params(model, best_params);
        log.stopped_early = true;
        break;
      }
    }
  }
  return log;
}

RunLog train_uncoded(UncodedDVAE& model, const Dataset& data, const TrainConfig& cfg) {
  Model m = model;
  check_kind(m, ModelKind::kUncoded, "train_uncoded");
  RunLog log = train(m, data, cfg);
  model = std::get<UncodedDVAE>(std::move(m));
  return log;
}

RunLog train_coded(CodedDVAE& model, const Dataset& data, const TrainConfig& cfg) {
  Model m = model;
  check_kind(m, ModelKind::kCoded, "train_coded");
  RunLog log = train(m, data, cfg);
  model = std::get<CodedDVAE>(std::move(m));
  return log;
}

RunLog train_hier(HierCodedDVAE& model, const Dataset& data, const TrainConfig& cfg) {
  Model m = model;
  check_kind(m, ModelKind::kHier, "train_hier");
  RunLog log = train(m, data, cfg);
  model = std::get<HierCodedDVAE>(std::move(m));
  return log;
}

}  // namespace cdvae
