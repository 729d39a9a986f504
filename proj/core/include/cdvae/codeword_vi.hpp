#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/models.hpp"
#include "cdvae/rng.hpp"

namespace cdvae {

/// Categorical q(c|x) over the words of a codebook, proportional to the
/// factorized per-bit posterior evaluated at each word (uniform p(c)).
class CategoricalPosterior {
 public:
  CategoricalPosterior(std::vector<double> log_weights, double log_norm, const Codebook& book);

  std::size_t size() const noexcept { return log_probs_.size(); }
  /// Normalized log-probability of word i.
  double log_prob(std::size_t i) const { return log_probs_[i]; }
  double prob(std::size_t i) const;
  std::span<const double> log_probs() const noexcept { return log_probs_; }
  /// log W, the log normalizer of the unnormalized weights.
  double log_norm() const noexcept { return log_norm_; }
  const Codebook& book() const noexcept { return *book_; }

 private:
  std::vector<double> log_probs_;
  double log_norm_;
  const Codebook* book_;
};

CategoricalPosterior categorical_posterior(const SoftWord& q_u, const Codebook& book);

std::pair<std::size_t, BitWord> sample_codeword(const CategoricalPosterior& post, Rng& rng);

struct WordElbo {
  double elbo = 0.0;       // recon - kl_exact
  double recon = 0.0;      // MC mean of log p(x|z)
  double recon_stderr = 0.0;
  double kl_exact = 0.0;   // by enumeration over the codebook
  double kl_mc = 0.0;      // MC estimate from the same draws
  double kl_mc_stderr = 0.0;
};

/// Monte-Carlo ELBO with S codeword draws. For each draw the generator is
/// consumed as: one categorical draw, then D uniforms for the inverse CDFs.
/// `model` supplies the decoder (input width D) and the smoothing.
WordElbo elbo_word(const ModelCore& model, std::span<const double> x, const CategoricalPosterior& post,
                   std::size_t samples, Rng& rng);

enum class ScoreBaseline { kLeaveOneOut, kNone };

/// Gradients of the negated ELBO: score-function estimate for the encoder,
/// pathwise for the decoder.
struct WordGradients {
  ParamStore encoder;
  ParamStore decoder;
  std::vector<double> f;  // per-sample f = log q(c|x) - log p(x|z) - log p(c)
};

/// REINFORCE estimator over S draws from q(c|x). With the leave-one-out
/// baseline: 1/(S-1) sum_s (f_s - mean f) grad log q(c_s|x); without:
/// 1/S sum_s f_s grad log q(c_s|x). The posterior is rebuilt from the encoder.
WordGradients reinforce_loo_grads(const ModelCore& model, std::span<const double> x, const Codebook& book,
                                  std::size_t samples, Rng& rng,
                                  ScoreBaseline baseline = ScoreBaseline::kLeaveOneOut);

/// Encoder-output gradient of log q(c_i|x) for every codeword i (rows), given
/// the clamped encoder probabilities. Exposed for verification.
Batch codeword_score_wrt_probs(const SoftWord& q_u, const CategoricalPosterior& post);

}  // namespace cdvae
