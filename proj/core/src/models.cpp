#include "cdvae/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdvae/errors.hpp"
#include "cdvae/numeric.hpp"

namespace cdvae {

namespace {

std::span<double> row(Batch& b, Eigen::Index i) {
  return {b.data() + i * b.cols(), static_cast<std::size_t>(b.cols())};
}
std::span<const double> row(const Batch& b, Eigen::Index i) {
  return {b.data() + i * b.cols(), static_cast<std::size_t>(b.cols())};
}

Batch as_batch(std::span<const double> v) {
  Batch b(1, static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), b.data());
  return b;
}

bool clamp_active(double p) noexcept { return p <= kProbClamp || p >= 1.0 - kProbClamp; }

double kl_terms(std::span<const double> q, double nu) {
  double kl = 0.0;
  for (double qj : q) kl += qj * std::log(qj / nu) + (1.0 - qj) * std::log((1.0 - qj) / (1.0 - nu));
  return kl;
}

// d KL / d q_j
double kl_slope(double q, double nu) { return std::log(q) - std::log1p(-q) - (std::log(nu) - std::log1p(-nu)); }

NetworkPlan encoder_plan(const ArchConfig& arch, std::size_t out) {
  NetworkPlan plan;
  plan.sizes.push_back(arch.data_dim);
  plan.sizes.insert(plan.sizes.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
  plan.sizes.push_back(out);
  plan.hidden = Activation::kLeakyRelu;
  plan.output = Activation::kLogistic;
  return plan;
}

NetworkPlan decoder_plan(const ArchConfig& arch, std::size_t in) {
  NetworkPlan plan;
  plan.sizes.push_back(in);
  plan.sizes.insert(plan.sizes.end(), arch.decoder_hidden.begin(), arch.decoder_hidden.end());
  plan.sizes.push_back(arch.data_dim);
  plan.hidden = Activation::kLeakyRelu;
  plan.output = Activation::kIdentity;
  return plan;
}

void build_core(ModelCore& core, const ArchConfig& arch, std::size_t latent, double beta, Rng& rng) {
  if (arch.data_dim == 0) throw ShapeError("ArchConfig: data_dim must be positive");
  if (arch.encoder_hidden.empty() || arch.decoder_hidden.empty()) {
    throw ShapeError("ArchConfig: encoder and decoder need at least one hidden layer");
  }
  core.encoder.plan = encoder_plan(arch, latent);
  core.decoder.plan = decoder_plan(arch, latent);
  core.encoder.params = ParamStore::glorot(core.encoder.plan, rng);
  core.decoder.params = ParamStore::glorot(core.decoder.plan, rng);
  core.smoothing = SmoothingParams(beta);
}

// Intermediate posterior quantities for a batch, kept for the reverse sweep.
struct Chain {
  Batch qu;   // clamped encoder output
  Batch q_m;  // information-bit marginals (hier: [q_m1 | q_m2])
  Batch q_s;  // per-latent sampling probabilities
  Batch q_m1, q_m12, q_m2, q_m12r;
};

Chain run_chain(const Model& model, const Batch& enc_out) {
  Chain ch;
  ch.qu = enc_out.unaryExpr([](double p) { return clamp_prob(p); });
  const Eigen::Index B = enc_out.rows();

  if (std::holds_alternative<UncodedDVAE>(model)) {
    ch.q_m = ch.qu;
    ch.q_s = ch.qu;
  } else if (const auto* cm = std::get_if<CodedDVAE>(&model)) {
    const auto& code = cm->code;
    ch.q_m.resize(B, static_cast<Eigen::Index>(code.info_len()));
    ch.q_s.resize(B, static_cast<Eigen::Index>(code.code_len()));
    for (Eigen::Index i = 0; i < B; ++i) {
      kernels::soft_decode(code, row(ch.qu, i), row(ch.q_m, i));
      kernels::soft_encode(code, row(ch.q_m, i), row(ch.q_s, i));
    }
  } else {
    const auto& hm = std::get<HierCodedDVAE>(model);
    const auto M = static_cast<Eigen::Index>(hm.branch1.info_len());
    const auto D1 = static_cast<Eigen::Index>(hm.branch1.code_len());
    const auto D2 = static_cast<Eigen::Index>(hm.branch2.code_len());
    ch.q_m1.resize(B, M);
    ch.q_m12.resize(B, M);
    ch.q_m2.resize(B, M);
    ch.q_m12r.resize(B, M);
    ch.q_m.resize(B, 2 * M);
    ch.q_s.resize(B, D1 + D2);
    for (Eigen::Index i = 0; i < B; ++i) {
      auto qu = row(ch.qu, i);
      kernels::soft_decode(hm.branch1, qu.subspan(0, D1), row(ch.q_m1, i));
      kernels::soft_decode(hm.branch2, qu.subspan(D1, D2), row(ch.q_m12, i));
      for (Eigen::Index k = 0; k < M; ++k) {
        ch.q_m2(i, k) = clamp_prob(kernels::xor_prob(ch.q_m12(i, k), ch.q_m1(i, k)));
        ch.q_m12r(i, k) = clamp_prob(kernels::xor_prob(ch.q_m1(i, k), ch.q_m2(i, k)));
        ch.q_m(i, k) = ch.q_m1(i, k);
        ch.q_m(i, M + k) = ch.q_m2(i, k);
      }
      auto qs = row(ch.q_s, i);
      kernels::soft_encode(hm.branch1, row(ch.q_m1, i), qs.subspan(0, D1));
      kernels::soft_encode(hm.branch2, row(ch.q_m12r, i), qs.subspan(D1, D2));
    }
  }
  return ch;
}

// Pulls d(objective)/d(q_s) back to d(objective)/d(encoder output), adding
// kl_scale * dKL/dq for every KL term of the model.
Batch chain_backward(const Model& model, const Chain& ch, const Batch& g_qs, double kl_scale) {
  const Eigen::Index B = ch.qu.rows();
  const double nu = core(model).prior.nu;
  Batch g_enc(B, ch.qu.cols());

  if (std::holds_alternative<UncodedDVAE>(model)) {
    for (Eigen::Index i = 0; i < B; ++i) {
      for (Eigen::Index j = 0; j < ch.qu.cols(); ++j) {
        const double q = ch.qu(i, j);
        g_enc(i, j) = clamp_active(q) ? 0.0 : g_qs(i, j) + kl_scale * kl_slope(q, nu);
      }
    }
  } else if (const auto* cm = std::get_if<CodedDVAE>(&model)) {
    const auto& code = cm->code;
    std::vector<double> g_m(code.info_len());
    for (Eigen::Index i = 0; i < B; ++i) {
      kernels::soft_encode_vjp(code, row(g_qs, i), g_m);
      for (std::size_t k = 0; k < g_m.size(); ++k) {
        g_m[k] += kl_scale * kl_slope(ch.q_m(i, static_cast<Eigen::Index>(k)), nu);
      }
      kernels::soft_decode_vjp(code, row(ch.qu, i), row(ch.q_m, i), g_m, row(g_enc, i));
    }
  } else {
    const auto& hm = std::get<HierCodedDVAE>(model);
    const std::size_t M = hm.branch1.info_len();
    const std::size_t D1 = hm.branch1.code_len();
    const std::size_t D2 = hm.branch2.code_len();
    std::vector<double> g_m1(M), g_r(M), g_m2(M), g_m12(M);
    for (Eigen::Index i = 0; i < B; ++i) {
      auto gq = row(g_qs, i);
      kernels::soft_encode_vjp(hm.branch1, gq.subspan(0, D1), g_m1);
      kernels::soft_encode_vjp(hm.branch2, gq.subspan(D1, D2), g_r);
      for (std::size_t k = 0; k < M; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double q1 = ch.q_m1(i, kk);
        const double q12 = ch.q_m12(i, kk);
        const double q2 = ch.q_m2(i, kk);
        g_m1[k] += kl_scale * kl_slope(q1, nu);
        g_m2[k] = 0.0;
        if (!clamp_active(ch.q_m12r(i, kk))) {
          g_m1[k] += g_r[k] * (1.0 - 2.0 * q2);
          g_m2[k] = g_r[k] * (1.0 - 2.0 * q1);
        }
        g_m2[k] += kl_scale * kl_slope(q2, nu);
        g_m12[k] = 0.0;
        if (!clamp_active(q2)) {
          g_m12[k] = g_m2[k] * (1.0 - 2.0 * q1);
          g_m1[k] += g_m2[k] * (1.0 - 2.0 * q12);
        }
      }
      auto qu = row(ch.qu, i);
      auto ge = row(g_enc, i);
      kernels::soft_decode_vjp(hm.branch1, qu.subspan(0, D1), row(ch.q_m1, i), g_m1, ge.subspan(0, D1));
      kernels::soft_decode_vjp(hm.branch2, qu.subspan(D1, D2), row(ch.q_m12, i), g_m12, ge.subspan(D1, D2));
    }
  }
  // The encoder clamp blocks gradient wherever it is active.
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < ch.qu.cols(); ++j) {
      if (clamp_active(ch.qu(i, j))) g_enc(i, j) = 0.0;
    }
  }
  return g_enc;
}

double recon_term(std::span<const double> x, std::span<const double> logits) {
  double r = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) r += x[k] * logits[k] - detail::softplus(logits[k]);
  return r;
}

void check_data(const Model& m, Eigen::Index cols, const char* what) {
  if (static_cast<std::size_t>(cols) != data_dim(m)) {
    throw ShapeError(std::string(what) + ": data width " + std::to_string(cols) + " != model input " +
                     std::to_string(data_dim(m)));
  }
}

SoftWord row_word(const Batch& b, Eigen::Index i) { return SoftWord(row(b, i)); }

}  // namespace

// ---------------------------------------------------------------------------

void PriorSpec::validate() const {
  if (!(nu >= kProbClamp && nu <= 1.0 - kProbClamp)) throw DomainError("PriorSpec: nu outside clamp band");
}

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kUncoded:
      return "uncoded";
    case ModelKind::kCoded:
      return "coded";
    case ModelKind::kHier:
      return "hier";
  }
  return "uncoded";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "uncoded") return ModelKind::kUncoded;
  if (name == "coded") return ModelKind::kCoded;
  if (name == "hier") return ModelKind::kHier;
  throw ConfigError("unknown model kind '" + name + "'");
}

UncodedDVAE make_uncoded(std::size_t info_bits, const ArchConfig& arch, double beta, Rng& rng) {
  if (info_bits == 0) throw DomainError("make_uncoded: M must be positive");
  UncodedDVAE m;
  m.info_bits = info_bits;
  build_core(m, arch, info_bits, beta, rng);
  return m;
}

CodedDVAE make_coded(const CodeSpec& code, const ArchConfig& arch, double beta, Rng& rng) {
  CodedDVAE m;
  m.code = code;
  build_core(m, arch, code.code_len(), beta, rng);
  return m;
}

HierCodedDVAE make_hier(const CodeSpec& branch1, const CodeSpec& branch2, const ArchConfig& arch, double beta,
                        Rng& rng) {
  if (branch1.info_len() != branch2.info_len()) throw ShapeError("make_hier: branches must share M");
  HierCodedDVAE m;
  m.branch1 = branch1;
  m.branch2 = branch2;
  build_core(m, arch, branch1.code_len() + branch2.code_len(), beta, rng);
  return m;
}

ModelKind kind(const Model& m) {
  switch (m.index()) {
    case 0:
      return ModelKind::kUncoded;
    case 1:
      return ModelKind::kCoded;
    default:
      return ModelKind::kHier;
  }
}

const ModelCore& core(const Model& m) {
  return std::visit([](const auto& v) -> const ModelCore& { return v; }, m);
}
ModelCore& core(Model& m) {
  return std::visit([](auto& v) -> ModelCore& { return v; }, m);
}

std::size_t data_dim(const Model& m) { return core(m).encoder.plan.input_dim(); }

std::size_t message_len(const Model& m) {
  if (const auto* u = std::get_if<UncodedDVAE>(&m)) return u->info_bits;
  if (const auto* c = std::get_if<CodedDVAE>(&m)) return c->code.info_len();
  return 2 * std::get<HierCodedDVAE>(m).branch1.info_len();
}

std::size_t latent_dim(const Model& m) { return core(m).encoder.plan.output_dim(); }

// ---------------------------------------------------------------------------
// Inference

SoftWord encoder_posterior(const Model& m, std::span<const double> x) {
  check_data(m, static_cast<Eigen::Index>(x.size()), "encoder_posterior");
  const auto& c = core(m);
  auto fwd = forward_mlp(c.encoder.plan, c.encoder.params, as_batch(x));
  return SoftWord(row(fwd.output, 0));
}

std::pair<SoftWord, SoftWord> infer_coded(const CodedDVAE& m, std::span<const double> x) {
  auto p = infer(Model(m), x);
  return {std::move(p.q_m), std::move(p.q_c)};
}

HierPosterior infer_hier(const HierCodedDVAE& m, std::span<const double> x) {
  const Model model(m);
  check_data(model, static_cast<Eigen::Index>(x.size()), "infer_hier");
  auto fwd = forward_mlp(m.encoder.plan, m.encoder.params, as_batch(x));
  const Chain ch = run_chain(model, fwd.output);
  return {row_word(ch.q_m1, 0), row_word(ch.q_m12, 0), row_word(ch.q_m2, 0), row_word(ch.q_m12r, 0),
          row_word(ch.q_s, 0)};
}

Posterior infer(const Model& m, std::span<const double> x) {
  auto all = infer_batch(m, as_batch(x));
  return std::move(all.front());
}

std::vector<Posterior> infer_batch(const Model& m, const Batch& x) {
  check_data(m, x.cols(), "infer");
  const auto& c = core(m);
  auto fwd = forward_mlp(c.encoder.plan, c.encoder.params, x);
  const Chain ch = run_chain(m, fwd.output);
  std::vector<Posterior> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back({row_word(ch.q_m, i), row_word(ch.q_s, i)});
  return out;
}

double kl_bernoulli(const SoftWord& q, const PriorSpec& prior) {
  prior.validate();
  return kl_terms(q.probs(), prior.nu);
}

// ---------------------------------------------------------------------------
// ELBO

BatchElbo elbo_batch(const Model& m, const Batch& x, const Batch& rho, ModelGrads* grads) {
  check_data(m, x.cols(), "elbo");
  const auto& c = core(m);
  const Eigen::Index B = x.rows();
  const auto Z = static_cast<Eigen::Index>(latent_dim(m));
  if (rho.rows() != B || rho.cols() != Z) {
    throw ShapeError("elbo: noise must be " + std::to_string(B) + "x" + std::to_string(Z));
  }

  auto enc = forward_mlp(c.encoder.plan, c.encoder.params, x);
  const Chain ch = run_chain(m, enc.output);

  Batch z(B, Z);
  Batch dz_dq(B, Z);
  for (Eigen::Index i = 0; i < B; ++i) {
    kernels::sample_smoothed(row(ch.q_s, i), row(rho, i), c.smoothing, row(z, i), row(dz_dq, i));
  }
  auto dec = forward_mlp(c.decoder.plan, c.decoder.params, z);

  BatchElbo out;
  out.items.resize(static_cast<std::size_t>(B));
  const bool hier = std::holds_alternative<HierCodedDVAE>(m);
  for (Eigen::Index i = 0; i < B; ++i) {
    auto& it = out.items[static_cast<std::size_t>(i)];
    it.recon = recon_term(row(x, i), row(dec.output, i));
    if (hier) {
      it.kl = kl_terms(row(ch.q_m1, i), c.prior.nu);
      it.kl2 = kl_terms(row(ch.q_m2, i), c.prior.nu);
    } else {
      it.kl = kl_terms(row(ch.q_m, i), c.prior.nu);
    }
    it.elbo = it.recon - it.kl - it.kl2;
    if (!std::isfinite(it.elbo)) throw NumericError("elbo: non-finite value for item " + std::to_string(i));
    out.mean.elbo += it.elbo;
    out.mean.recon += it.recon;
    out.mean.kl += it.kl;
    out.mean.kl2 += it.kl2;
  }
  const double inv = 1.0 / static_cast<double>(B);
  out.mean.elbo *= inv;
  out.mean.recon *= inv;
  out.mean.kl *= inv;
  out.mean.kl2 *= inv;

  if (grads != nullptr) {
    // d(mean recon)/d(logits) = (x - sigmoid(logits)) / B
    Batch g_logits = dec.output.unaryExpr([](double v) { return detail::sigmoid(v); });
    g_logits = (x - g_logits) * inv;
    auto dec_back = backward(dec.tape, g_logits);
    Batch g_qs = dec_back.input_grad.cwiseProduct(dz_dq);
    Batch g_enc = chain_backward(m, ch, g_qs, -inv);
    auto enc_back = backward(enc.tape, g_enc);
    grads->encoder = std::move(enc_back.grads);
    grads->decoder = std::move(dec_back.grads);
  }
  return out;
}

ElboParts elbo(const Model& m, std::span<const double> x, const NoiseDraw& noise) {
  require_same_length(noise.size(), latent_dim(m), "elbo noise");
  return elbo_batch(m, as_batch(x), as_batch(noise.rho)).mean;
}

ElboParts elbo_hier(const HierCodedDVAE& m, std::span<const double> x, const NoiseDraw& noise) {
  return elbo(Model(m), x, noise);
}

double log_likelihood(const Model& m, std::span<const double> x, std::span<const double> z) {
  require_same_length(x.size(), data_dim(m), "log_likelihood data");
  require_same_length(z.size(), latent_dim(m), "log_likelihood latent");
  const auto& c = core(m);
  auto dec = forward_mlp(c.decoder.plan, c.decoder.params, as_batch(z));
  return recon_term(x, row(dec.output, 0));
}

double marginal_z_logpdf(const SoftWord& q, std::span<const double> z, const SmoothingParams& p) {
  require_same_length(z.size(), q.size(), "marginal_z_logpdf");
  const double log_norm = std::log(p.z_norm());
  double total = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (!(z[j] >= 0.0 && z[j] <= 1.0)) throw DomainError("marginal_z_logpdf: z outside [0,1]");
    const double a = q.log_p0(j) - p.beta() * z[j];
    const double b = q.log_p1(j) + p.beta() * (z[j] - 1.0);
    const double hi = std::max(a, b);
    total += hi + std::log1p(std::exp(std::min(a, b) - hi)) - log_norm;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Importance sampling

ImportanceEstimate importance_weights(const Model& m, std::span<const double> x, std::span<const NoiseDraw> noise) {
  if (noise.empty()) throw DomainError("iwae_bound: k must be at least 1");
  check_data(m, static_cast<Eigen::Index>(x.size()), "iwae_bound");
  const auto& c = core(m);
  const auto Z = latent_dim(m);
  const Posterior post = infer(m, x);
  const SoftWord prior_word = SoftWord::constant(Z, c.prior.nu);

  const auto k = static_cast<Eigen::Index>(noise.size());
  Batch z(k, static_cast<Eigen::Index>(Z));
  std::vector<double> scratch(Z);
  for (Eigen::Index s = 0; s < k; ++s) {
    require_same_length(noise[static_cast<std::size_t>(s)].size(), Z, "iwae_bound noise");
    kernels::sample_smoothed(post.q_c.probs(), noise[static_cast<std::size_t>(s)].rho, c.smoothing, row(z, s),
                             scratch);
  }
  auto dec = forward_mlp(c.decoder.plan, c.decoder.params, z);

  ImportanceEstimate est;
  est.log_weights.resize(static_cast<std::size_t>(k));
  for (Eigen::Index s = 0; s < k; ++s) {
    const auto zs = row(z, s);
    est.log_weights[static_cast<std::size_t>(s)] = recon_term(x, row(dec.output, s)) +
                                                   marginal_z_logpdf(prior_word, zs, c.smoothing) -
                                                   marginal_z_logpdf(post.q_c, zs, c.smoothing);
  }
  const double lse = detail::log_sum_exp(est.log_weights);
  est.value = lse - std::log(static_cast<double>(k));
  double sum_sq = 0.0;
  for (double lw : est.log_weights) sum_sq += std::exp(2.0 * (lw - lse));
  est.ess = 1.0 / sum_sq;
  if (!std::isfinite(est.value)) throw NumericError("iwae_bound: non-finite estimate");
  return est;
}

double iwae_bound(const Model& m, std::span<const double> x, std::span<const NoiseDraw> noise) {
  return importance_weights(m, x, noise).value;
}

namespace {

// One coordinate of a log mixture density plus its z- and q-derivatives.
struct MixTerm {
  double logpdf, d_z, d_q;
};

MixTerm mix_term(double q, double z, const SmoothingParams& p) {
  const double la = std::log1p(-q) - p.beta() * z;
  const double lb = std::log(q) + p.beta() * (z - 1.0);
  const double hi = std::max(la, lb);
  const double r = detail::sigmoid(lb - la);
  return {hi + std::log1p(std::exp(std::min(la, lb) - hi)) - std::log(p.z_norm()), p.beta() * (2.0 * r - 1.0),
          r / q - (1.0 - r) / (1.0 - q)};
}

}  // namespace

BatchIwae iwae_batch(const Model& m, const Batch& x, std::span<const Batch> rho, ModelGrads* grads) {
  if (rho.empty()) throw DomainError("iwae: k must be at least 1");
  check_data(m, x.cols(), "iwae");
  const auto& c = core(m);
  const Eigen::Index B = x.rows();
  const auto Z = static_cast<Eigen::Index>(latent_dim(m));
  const auto K = static_cast<Eigen::Index>(rho.size());
  for (const auto& r : rho) {
    if (r.rows() != B || r.cols() != Z) throw ShapeError("iwae: noise must be " + std::to_string(B) + "x" + std::to_string(Z));
  }

  auto enc = forward_mlp(c.encoder.plan, c.encoder.params, x);
  const Chain ch = run_chain(m, enc.output);

  // Row s*B + i holds sample s of item i.
  Batch z(K * B, Z);
  Batch dz_dq(K * B, Z);
  for (Eigen::Index s = 0; s < K; ++s) {
    for (Eigen::Index i = 0; i < B; ++i) {
      kernels::sample_smoothed(row(ch.q_s, i), row(rho[static_cast<std::size_t>(s)], i), c.smoothing,
                               row(z, s * B + i), row(dz_dq, s * B + i));
    }
  }
  auto dec = forward_mlp(c.decoder.plan, c.decoder.params, z);

  Batch logw(B, K);
  Batch dlw_dz_direct(K * B, Z);  // d(log p(z) - log q(z|x))/dz
  Batch dlw_dq_direct(K * B, Z);  // -d log q(z|x)/dq at fixed z
  const double nu = c.prior.nu;
  for (Eigen::Index s = 0; s < K; ++s) {
    for (Eigen::Index i = 0; i < B; ++i) {
      const Eigen::Index r = s * B + i;
      double lw = recon_term(row(x, i), row(dec.output, r));
      for (Eigen::Index j = 0; j < Z; ++j) {
        const MixTerm tp = mix_term(nu, z(r, j), c.smoothing);
        const MixTerm tq = mix_term(ch.q_s(i, j), z(r, j), c.smoothing);
        lw += tp.logpdf - tq.logpdf;
        dlw_dz_direct(r, j) = tp.d_z - tq.d_z;
        dlw_dq_direct(r, j) = -tq.d_q;
      }
      logw(i, s) = lw;
    }
  }

  BatchIwae out;
  out.items.resize(static_cast<std::size_t>(B));
  Batch wn(B, K);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double hi = logw.row(i).maxCoeff();
    const double lse = hi + std::log((logw.row(i).array() - hi).exp().sum());
    const double v = lse - std::log(static_cast<double>(K));
    if (!std::isfinite(v)) throw NumericError("iwae: non-finite value for item " + std::to_string(i));
    out.items[static_cast<std::size_t>(i)] = v;
    out.mean += v;
    wn.row(i) = (logw.row(i).array() - lse).exp();
  }
  const double inv = 1.0 / static_cast<double>(B);
  out.mean *= inv;

  if (grads != nullptr) {
    Batch g_logits = dec.output.unaryExpr([](double v) { return detail::sigmoid(v); });
    for (Eigen::Index s = 0; s < K; ++s) {
      for (Eigen::Index i = 0; i < B; ++i) {
        const Eigen::Index r = s * B + i;
        g_logits.row(r) = (x.row(i) - g_logits.row(r)) * (wn(i, s) * inv);
      }
    }
    auto dec_back = backward(dec.tape, g_logits);
    Batch g_qs = Batch::Zero(B, Z);
    for (Eigen::Index s = 0; s < K; ++s) {
      for (Eigen::Index i = 0; i < B; ++i) {
        const Eigen::Index r = s * B + i;
        const double w = wn(i, s) * inv;
        for (Eigen::Index j = 0; j < Z; ++j) {
          g_qs(i, j) += dec_back.input_grad(r, j) * dz_dq(r, j) +
                        w * (dlw_dz_direct(r, j) * dz_dq(r, j) + dlw_dq_direct(r, j));
        }
      }
    }
    Batch g_enc = chain_backward(m, ch, g_qs, 0.0);
    auto enc_back = backward(enc.tape, g_enc);
    grads->encoder = std::move(enc_back.grads);
    grads->decoder = std::move(dec_back.grads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation / reconstruction

BitWord sample_prior_message(const Model& m, Rng& rng) {
  const double nu = core(m).prior.nu;
  std::vector<std::uint8_t> bits(message_len(m));
  for (auto& b : bits) b = rng.bernoulli(nu) ? 1 : 0;
  return BitWord(std::move(bits));
}

std::vector<double> latent_from_message(const Model& m, const BitWord& msg, const NoiseDraw& noise) {
  require_same_length(msg.size(), message_len(m), "generate message");
  require_same_length(noise.size(), latent_dim(m), "generate noise");
  std::vector<std::uint8_t> coded;
  if (std::holds_alternative<UncodedDVAE>(m)) {
    coded.assign(msg.bits().begin(), msg.bits().end());
  } else if (const auto* cm = std::get_if<CodedDVAE>(&m)) {
    auto c = hard_encode(cm->code, msg);
    coded.assign(c.bits().begin(), c.bits().end());
  } else {
    const auto& hm = std::get<HierCodedDVAE>(m);
    const std::size_t M = hm.branch1.info_len();
    const BitWord m1(std::vector<std::uint8_t>(msg.bits().begin(), msg.bits().begin() + static_cast<std::ptrdiff_t>(M)));
    const BitWord m2(std::vector<std::uint8_t>(msg.bits().begin() + static_cast<std::ptrdiff_t>(M), msg.bits().end()));
    auto c1 = hard_encode(hm.branch1, m1);
    auto c2 = hard_encode(hm.branch2, xor_combine(m1, m2));
    coded.assign(c1.bits().begin(), c1.bits().end());
    coded.insert(coded.end(), c2.bits().begin(), c2.bits().end());
  }
  const auto& sp = core(m).smoothing;
  std::vector<double> z(coded.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = conditional_inverse_cdf(coded[j], noise.rho[j], sp);
  return z;
}

Batch decode_mean_batch(const Model& m, const Batch& z) {
  const auto& c = core(m);
  auto dec = forward_mlp(c.decoder.plan, c.decoder.params, z);
  return dec.output.unaryExpr([](double v) { return detail::sigmoid(v); });
}

std::vector<double> decode_mean(const Model& m, std::span<const double> z) {
  require_same_length(z.size(), latent_dim(m), "decode_mean");
  Batch out = decode_mean_batch(m, as_batch(z));
  return {out.data(), out.data() + out.size()};
}

std::vector<double> generate(const Model& m, const BitWord& msg, const NoiseDraw& noise) {
  return decode_mean(m, latent_from_message(m, msg, noise));
}

Reconstruction reconstruct(const Model& m, std::span<const double> x, const NoiseDraw& noise) {
  require_same_length(noise.size(), latent_dim(m), "reconstruct noise");
  Posterior post = infer(m, x);
  std::vector<double> z(noise.size());
  std::vector<double> scratch(noise.size());
  kernels::sample_smoothed(post.q_c.probs(), noise.rho, core(m).smoothing, z, scratch);
  return {decode_mean(m, z), std::move(post.q_m)};
}

// ---------------------------------------------------------------------------

std::vector<double> flatten_params(const Model& m) {
  const auto& c = core(m);
  auto flat = c.encoder.params.flatten();
  auto dec = c.decoder.params.flatten();
  flat.insert(flat.end(), dec.begin(), dec.end());
  return flat;
}

void assign_params(Model& m, std::span<const double> flat) {
  auto& c = core(m);
  const std::size_t ne = c.encoder.params.size();
  require_same_length(flat.size(), ne + c.decoder.params.size(), "assign_params");
  c.encoder.params.assign(flat.subspan(0, ne));
  c.decoder.params.assign(flat.subspan(ne));
}

std::vector<double> flatten_grads(const ModelGrads& g) {
  auto flat = g.encoder.flatten();
  auto dec = g.decoder.flatten();
  flat.insert(flat.end(), dec.begin(), dec.end());
  return flat;
}

}  // namespace cdvae
