#include "cdvae/codeword_vi.hpp"

#include <cmath>

#include "cdvae/errors.hpp"
#include "cdvae/numeric.hpp"

namespace cdvae {

namespace {

std::vector<double> draw_latent(const BitWord& c, const SmoothingParams& sp, Rng& rng) {
  const NoiseDraw noise = NoiseDraw::draw(c.size(), rng);
  std::vector<double> z(c.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = conditional_inverse_cdf(c[j], noise.rho[j], sp);
  return z;
}

double bernoulli_loglik(std::span<const double> x, std::span<const double> logits) {
  double r = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) r += x[k] * logits[k] - detail::softplus(logits[k]);
  return r;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

CategoricalPosterior::CategoricalPosterior(std::vector<double> log_weights, double log_norm, const Codebook& book)
    : log_probs_(std::move(log_weights)), log_norm_(log_norm), book_(&book) {
  require_same_length(log_probs_.size(), book.size(), "CategoricalPosterior");
  for (double lw : log_probs_) {
    if (std::isnan(lw) || lw > 1e-9) throw NumericError("CategoricalPosterior: invalid log-probability");
  }
}

double CategoricalPosterior::prob(std::size_t i) const { return std::exp(log_probs_[i]); }

CategoricalPosterior categorical_posterior(const SoftWord& q_u, const Codebook& book) {
  require_same_length(q_u.size(), book.word_len(), "categorical_posterior");
  if (book.size() > (std::size_t{1} << kMaxEnumerableBits)) throw CapacityError("categorical_posterior: codebook too large");
  std::vector<double> lw(book.size());
  for (std::size_t i = 0; i < book.size(); ++i) {
    double l = 0.0;
    for (std::size_t j = 0; j < q_u.size(); ++j) l += book[i][j] ? q_u.log_p1(j) : q_u.log_p0(j);
    lw[i] = l;
  }
  const double log_norm = detail::log_sum_exp(lw);
  for (auto& l : lw) l -= log_norm;
  return CategoricalPosterior(std::move(lw), log_norm, book);
}

std::pair<std::size_t, BitWord> sample_codeword(const CategoricalPosterior& post, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = post.size() - 1;
  for (std::size_t i = 0; i < post.size(); ++i) {
    acc += post.prob(i);
    if (u < acc) {
      pick = i;
      break;
    }
  }
  return {pick, post.book()[pick]};
}

WordElbo elbo_word(const ModelCore& model, std::span<const double> x, const CategoricalPosterior& post,
                   std::size_t samples, Rng& rng) {
  if (samples == 0) throw DomainError("elbo_word: need at least one sample");
  const double log_n = std::log(static_cast<double>(post.size()));
  const auto D = static_cast<Eigen::Index>(post.book().word_len());
  if (model.decoder.plan.input_dim() != static_cast<std::size_t>(D)) throw ShapeError("elbo_word: decoder width != D");

  Batch z(static_cast<Eigen::Index>(samples), D);
  std::vector<double> kl_draws(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    auto [idx, word] = sample_codeword(post, rng);
    const auto zs = draw_latent(word, model.smoothing, rng);
    std::copy(zs.begin(), zs.end(), z.row(static_cast<Eigen::Index>(s)).data());
    kl_draws[s] = post.log_prob(idx) + log_n;
  }
  auto dec = forward_mlp(model.decoder.plan, model.decoder.params, z);
  std::vector<double> recon(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    recon[s] = bernoulli_loglik(x, {dec.output.row(static_cast<Eigen::Index>(s)).data(), x.size()});
  }

  WordElbo out;
  out.recon = mean_of(recon);
  out.recon_stderr = stderr_of(recon, out.recon);
  out.kl_mc = mean_of(kl_draws);
  out.kl_mc_stderr = stderr_of(kl_draws, out.kl_mc);
  for (std::size_t i = 0; i < post.size(); ++i) out.kl_exact += post.prob(i) * (post.log_prob(i) + log_n);
  out.elbo = out.recon - out.kl_exact;
  return out;
}

Batch codeword_score_wrt_probs(const SoftWord& q_u, const CategoricalPosterior& post) {
  const auto& book = post.book();
  const auto n = static_cast<Eigen::Index>(book.size());
  const auto D = static_cast<Eigen::Index>(q_u.size());
  Batch dl(n, D);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < D; ++j) {
      const double g = q_u.prob(static_cast<std::size_t>(j));
      dl(i, j) = book[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ? 1.0 / g : -1.0 / (1.0 - g);
    }
  }
  Eigen::RowVectorXd expected = Eigen::RowVectorXd::Zero(D);
  for (Eigen::Index i = 0; i < n; ++i) expected += post.prob(static_cast<std::size_t>(i)) * dl.row(i);
  dl.rowwise() -= expected;
  return dl;
}

WordGradients reinforce_loo_grads(const ModelCore& model, std::span<const double> x, const Codebook& book,
                                  std::size_t samples, Rng& rng, ScoreBaseline baseline) {
  if (samples < 2) throw DomainError("reinforce_loo_grads: need S >= 2");
  const auto D = static_cast<Eigen::Index>(book.word_len());
  if (model.encoder.plan.output_dim() != book.word_len()) throw ShapeError("reinforce_loo_grads: encoder width != D");
  require_same_length(x.size(), model.encoder.plan.input_dim(), "reinforce_loo_grads data");

  Batch xb(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), xb.data());
  auto enc = forward_mlp(model.encoder.plan, model.encoder.params, xb);
  const SoftWord q_u(std::span<const double>(enc.output.data(), static_cast<std::size_t>(D)));
  const CategoricalPosterior post = categorical_posterior(q_u, book);
  const Batch score = codeword_score_wrt_probs(q_u, post);
  const double log_pc = -std::log(static_cast<double>(book.size()));

  const auto S = static_cast<Eigen::Index>(samples);
  Batch z(S, D);
  std::vector<std::size_t> picks(samples);
  for (Eigen::Index s = 0; s < S; ++s) {
    auto [idx, word] = sample_codeword(post, rng);
    picks[static_cast<std::size_t>(s)] = idx;
    const auto zs = draw_latent(word, model.smoothing, rng);
    std::copy(zs.begin(), zs.end(), z.row(s).data());
  }
  auto dec = forward_mlp(model.decoder.plan, model.decoder.params, z);

  WordGradients out;
  out.f.resize(samples);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double loglik = bernoulli_loglik(x, {dec.output.row(s).data(), x.size()});
    out.f[static_cast<std::size_t>(s)] = post.log_prob(picks[static_cast<std::size_t>(s)]) - loglik - log_pc;
  }
  const double f_bar = mean_of(out.f);

  Batch seed = Batch::Zero(1, D);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double f = out.f[static_cast<std::size_t>(s)];
    const double coef = baseline == ScoreBaseline::kLeaveOneOut ? (f - f_bar) / static_cast<double>(S - 1)
                                                                : f / static_cast<double>(S);
    seed += coef * score.row(static_cast<Eigen::Index>(picks[static_cast<std::size_t>(s)]));
  }
  for (Eigen::Index j = 0; j < D; ++j) {
    const double g = enc.output(0, j);
    if (g <= kProbClamp || g >= 1.0 - kProbClamp) seed(0, j) = 0.0;
  }
  out.encoder = backward(enc.tape, seed).grads;

  Batch g_logits = dec.output.unaryExpr([](double v) { return detail::sigmoid(v); });
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index k = 0; k < g_logits.cols(); ++k) {
      g_logits(s, k) = (g_logits(s, k) - x[static_cast<std::size_t>(k)]) / static_cast<double>(S);
    }
  }
  out.decoder = backward(dec.tape, g_logits).grads;
  return out;
}

}  // namespace cdvae
