#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdvae/models.hpp"
#include "cdvae/rng.hpp"

namespace cdvae {

struct ErrorReport {
  double ber_sampled = 0.0;
  double ber_map = 0.0;
  double wer_sampled = 0.0;
  double wer_map = 0.0;
  std::size_t trials = 0;
};

/// Generation-recovery protocol. Trial t uses rng.split(t): m ~ prior,
/// x = decoder mean of the smoothed codeword, then q(m|x) is decoded both by
/// one posterior sample and by MAP.
ErrorReport ber_wer(const Model& model, std::size_t trials, const Rng& rng);

/// 20 log10(max(x) / RMSE). Identical images give +infinity.
double psnr(std::span<const double> x, std::span<const double> x_prime);

/// Factorized entropy in nats.
double posterior_entropy(const SoftWord& q_m);

/// Importance-sampled log p(x) with `samples` draws from `rng`; this is the
/// k = samples importance-weighted bound on the same noise.
ImportanceEstimate loglik_importance(const Model& model, std::span<const double> x, std::size_t samples, Rng& rng);

// ---------------------------------------------------------------------------
// Variational gap vs. accuracy bound on enumerable toys.

/// Binary observations drawn from the toy together with their posterior
/// p(m | x) over all 2^M messages (index order of BitWord::from_index).
struct GapTable {
  std::size_t message_bits = 0;
  std::vector<std::vector<double>> x;
  std::vector<BitWord> truth;
  std::vector<std::vector<double>> posterior;
};

/// p(x|m) is estimated per message from `mc_samples` latent draws shared by
/// all observations. Throws CapacityError above four message bits.
GapTable build_gap_table(const Model& toy, std::size_t observations, std::size_t mc_samples, Rng& rng);

/// Variational family: maps observation index and true posterior to q(m|x).
using QFamily = std::function<std::vector<double>(std::size_t, std::span<const double>)>;

struct GapEstimate {
  double acc_true = 0.0;  // A_theta
  double acc_var = 0.0;   // A_eta
  double delta = 0.0;
  double delta_stderr = 0.0;
  double kl_hat = 0.0;
  double kl_stderr = 0.0;
  double bound = 0.0;     // sqrt(1 - exp(-2 kl_hat))
  double bound_stderr = 0.0;
  bool violated = false;  // beyond 3 standard errors on both sides
  std::size_t observations = 0;
};

GapEstimate gap_from_table(const GapTable& table, const QFamily& q);
GapEstimate gap_bound_check(const Model& toy, const QFamily& q, std::size_t observations, std::size_t mc_samples,
                            Rng& rng);

/// The model's own factorized posterior over messages.
QFamily model_family(const Model& toy, const GapTable& table);

// ---------------------------------------------------------------------------

struct MetricReport {
  double ber = 0.0;
  double ber_map = 0.0;
  double wer = 0.0;
  double wer_map = 0.0;
  double psnr_mean = 0.0;
  double entropy_mean = 0.0;
  double ll_mean = 0.0;
  double ess_mean = 0.0;

  std::string to_json() const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

struct EvalOptions {
  std::size_t trials = 1000;      // generation-recovery trials
  std::size_t ll_samples = 300;   // importance samples per item
  std::size_t max_items = 1000;   // test items used for PSNR, entropy and LL
};

MetricReport evaluate(const Model& model, const Batch& test, const EvalOptions& opt, const Rng& rng);

std::string gap_to_json(const GapEstimate& g);

}  // namespace cdvae
