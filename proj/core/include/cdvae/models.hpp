#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/diffcore.hpp"
#include "cdvae/rng.hpp"
#include "cdvae/smoothing.hpp"

namespace cdvae {

/// Independent Bernoulli(nu) prior shared by every information bit.
struct PriorSpec {
  double nu = 0.5;
  void validate() const;
};

struct Network {
  NetworkPlan plan;
  ParamStore params;
};

/// Parts shared by all model variants. The encoder ends in a logistic layer
/// (bit probabilities); the decoder emits logits of a per-pixel Bernoulli
/// likelihood on intensities in [0, 1].
struct ModelCore {
  Network encoder;
  Network decoder;
  PriorSpec prior;
  SmoothingParams smoothing;
};

struct UncodedDVAE : ModelCore {
  std::size_t info_bits = 0;
};

struct CodedDVAE : ModelCore {
  CodeSpec code{1, 1};
};

/// Two repetition-coded branches; branch 2 carries m1 xor m2.
struct HierCodedDVAE : ModelCore {
  CodeSpec branch1{1, 1};
  CodeSpec branch2{1, 1};
};

using Model = std::variant<UncodedDVAE, CodedDVAE, HierCodedDVAE>;

enum class ModelKind { kUncoded, kCoded, kHier };

const char* model_kind_name(ModelKind k);
ModelKind parse_model_kind(const std::string& name);

struct ArchConfig {
  std::size_t data_dim = 0;
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<std::size_t> decoder_hidden{64};
};

/// Builders draw encoder weights first, then decoder weights, from `rng`.
UncodedDVAE make_uncoded(std::size_t info_bits, const ArchConfig& arch, double beta, Rng& rng);
CodedDVAE make_coded(const CodeSpec& code, const ArchConfig& arch, double beta, Rng& rng);
HierCodedDVAE make_hier(const CodeSpec& branch1, const CodeSpec& branch2, const ArchConfig& arch, double beta,
                        Rng& rng);

ModelKind kind(const Model& m);
const ModelCore& core(const Model& m);
ModelCore& core(Model& m);
std::size_t data_dim(const Model& m);
/// Information bits inferred and generated: M, or 2M for the hierarchical model.
std::size_t message_len(const Model& m);
/// Width of z (= encoder output = decoder input).
std::size_t latent_dim(const Model& m);

/// Per-item posterior: information-bit marginals and the per-coordinate
/// probabilities that drive the relaxed sampler.
struct Posterior {
  SoftWord q_m;
  SoftWord q_c;
};

struct HierPosterior {
  SoftWord q_m1;
  SoftWord q_m12;
  SoftWord q_m2;
  SoftWord q_m12_recombined;
  SoftWord q_c;
};

/// Clamped encoder output: q(m|x) for the uncoded model, q^u(c|x) otherwise.
SoftWord encoder_posterior(const Model& m, std::span<const double> x);
/// Soft decode then soft encode: (q_m, q_c).
std::pair<SoftWord, SoftWord> infer_coded(const CodedDVAE& m, std::span<const double> x);
HierPosterior infer_hier(const HierCodedDVAE& m, std::span<const double> x);
Posterior infer(const Model& m, std::span<const double> x);
std::vector<Posterior> infer_batch(const Model& m, const Batch& x);

/// Closed-form KL(Ber(q) || Ber(nu)) summed over bits, in nats.
double kl_bernoulli(const SoftWord& q, const PriorSpec& prior);

struct ElboParts {
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double kl2 = 0.0;  // hierarchical branch-2 term; zero otherwise
};

struct ModelGrads {
  ParamStore encoder;
  ParamStore decoder;
};

struct BatchElbo {
  ElboParts mean;
  std::vector<ElboParts> items;
};

/// Single-sample ELBO for each row of `x` with noise rows `rho`
/// (width latent_dim). When `grads` is non-null it receives the gradient of
/// the batch-mean ELBO with respect to encoder and decoder parameters.
BatchElbo elbo_batch(const Model& m, const Batch& x, const Batch& rho, ModelGrads* grads = nullptr);

ElboParts elbo(const Model& m, std::span<const double> x, const NoiseDraw& noise);
ElboParts elbo_hier(const HierCodedDVAE& m, std::span<const double> x, const NoiseDraw& noise);

/// log p(x | z) under the Bernoulli likelihood.
double log_likelihood(const Model& m, std::span<const double> x, std::span<const double> z);

/// sum_j log[(1 - q_j) p(z_j|0) + q_j p(z_j|1)].
double marginal_z_logpdf(const SoftWord& q, std::span<const double> z, const SmoothingParams& p);

struct ImportanceEstimate {
  double value = 0.0;  // log of the mean importance weight
  double ess = 0.0;    // effective sample size of the normalized weights
  std::vector<double> log_weights;
};

/// log w = log p(x|z) + log p(z) - log q(z|x) for z drawn from the posterior
/// chain with each noise draw; p(z) and q(z|x) are factorized mixtures.
ImportanceEstimate importance_weights(const Model& m, std::span<const double> x, std::span<const NoiseDraw> noise);
double iwae_bound(const Model& m, std::span<const double> x, std::span<const NoiseDraw> noise);

struct BatchIwae {
  double mean = 0.0;
  std::vector<double> items;
};

/// k-sample importance-weighted bound per row of `x`; rho[s] holds the noise
/// of sample s for every row. `grads` receives the gradient of the batch mean.
BatchIwae iwae_batch(const Model& m, const Batch& x, std::span<const Batch> rho, ModelGrads* grads = nullptr);

BitWord sample_prior_message(const Model& m, Rng& rng);
/// Hard latent path: encode m (hierarchically when applicable) and smooth each
/// coded bit with its conditional inverse CDF.
std::vector<double> latent_from_message(const Model& m, const BitWord& msg, const NoiseDraw& noise);
/// Decoder mean for the latent of `msg`.
std::vector<double> generate(const Model& m, const BitWord& msg, const NoiseDraw& noise);
std::vector<double> decode_mean(const Model& m, std::span<const double> z);
Batch decode_mean_batch(const Model& m, const Batch& z);

struct Reconstruction {
  std::vector<double> x;
  SoftWord q_m;
};

Reconstruction reconstruct(const Model& m, std::span<const double> x, const NoiseDraw& noise);

/// Encoder then decoder parameters, flattened.
std::vector<double> flatten_params(const Model& m);
void assign_params(Model& m, std::span<const double> flat);
std::vector<double> flatten_grads(const ModelGrads& g);

}  // namespace cdvae
