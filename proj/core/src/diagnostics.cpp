#include "cdvae/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>

#include "cdvae/errors.hpp"
#include "cdvae/numeric.hpp"
#include "cdvae/training.hpp"

namespace cdvae {

namespace {

struct Moments {
  double mean = 0.0;
  double stderr_ = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return m;
}

double kl_bound(double kl) { return std::sqrt(std::max(0.0, -std::expm1(-2.0 * kl))); }

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

ErrorReport ber_wer(const Model& model, std::size_t trials, const Rng& rng) {
  if (trials == 0) throw DomainError("ber_wer: trials must be >= 1");
  const std::size_t M = message_len(model);
  const std::size_t Z = latent_dim(model);
  std::size_t bit_err_s = 0, bit_err_map = 0, word_err_s = 0, word_err_map = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng tr = rng.split(t);
    const BitWord m = sample_prior_message(model, tr);
    const auto x = generate(model, m, NoiseDraw::draw(Z, tr));
    const Posterior post = infer(model, x);
    const BitWord map = map_bits(post.q_m);
    std::size_t es = 0, em = 0;
    for (std::size_t j = 0; j < M; ++j) {
      const std::uint8_t sampled = tr.bernoulli(post.q_m.prob(j)) ? 1 : 0;
      es += sampled != m[j];
      em += map[j] != m[j];
    }
    bit_err_s += es;
    bit_err_map += em;
    word_err_s += es > 0;
    word_err_map += em > 0;
  }
  const auto n = static_cast<double>(trials);
  const auto nb = n * static_cast<double>(M);
  return {static_cast<double>(bit_err_s) / nb, static_cast<double>(bit_err_map) / nb,
          static_cast<double>(word_err_s) / n, static_cast<double>(word_err_map) / n, trials};
}

double psnr(std::span<const double> x, std::span<const double> x_prime) {
  require_same_length(x.size(), x_prime.size(), "psnr");
  if (x.empty()) throw ShapeError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - x_prime[i]) * (x[i] - x_prime[i]);
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double rmse = std::sqrt(se / static_cast<double>(x.size()));
  const double peak = *std::max_element(x.begin(), x.end());
  return 20.0 * std::log10(peak / rmse);
}

double posterior_entropy(const SoftWord& q_m) {
  double h = 0.0;
  for (std::size_t j = 0; j < q_m.size(); ++j) {
    h -= q_m.prob(j) * q_m.log_p1(j) + (1.0 - q_m.prob(j)) * q_m.log_p0(j);
  }
  return h;
}

ImportanceEstimate loglik_importance(const Model& model, std::span<const double> x, std::size_t samples, Rng& rng) {
  if (samples == 0) throw DomainError("loglik_importance: samples must be >= 1");
  std::vector<NoiseDraw> noise;
  noise.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) noise.push_back(NoiseDraw::draw(latent_dim(model), rng));
  return importance_weights(model, x, noise);
}

// ---------------------------------------------------------------------------

GapTable build_gap_table(const Model& toy, std::size_t observations, std::size_t mc_samples, Rng& rng) {
  const std::size_t M = message_len(toy);
  if (M > 4) throw CapacityError("gap_bound_check: message length " + std::to_string(M) + " exceeds 4 bits");
  if (observations == 0 || mc_samples == 0) throw DomainError("gap_bound_check: counts must be positive");
  const std::size_t n_msg = std::size_t{1} << M;
  const auto Z = latent_dim(toy);
  const auto K = static_cast<Eigen::Index>(data_dim(toy));
  const auto& c = core(toy);

  GapTable t;
  t.message_bits = M;
  Batch X(static_cast<Eigen::Index>(observations), K);
  for (std::size_t i = 0; i < observations; ++i) {
    BitWord m = sample_prior_message(toy, rng);
    const auto mean = generate(toy, m, NoiseDraw::draw(Z, rng));
    std::vector<double> x(mean.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.bernoulli(mean[k]) ? 1.0 : 0.0;
    std::copy(x.begin(), x.end(), X.row(static_cast<Eigen::Index>(i)).data());
    t.x.push_back(std::move(x));
    t.truth.push_back(std::move(m));
  }

  // log p(x_i | m) for every message, by Monte Carlo over z.
  const double log_s = std::log(static_cast<double>(mc_samples));
  Batch log_px(static_cast<Eigen::Index>(observations), static_cast<Eigen::Index>(n_msg));
  Batch Zs(static_cast<Eigen::Index>(mc_samples), static_cast<Eigen::Index>(Z));
  for (std::size_t mi = 0; mi < n_msg; ++mi) {
    const BitWord m = BitWord::from_index(mi, M);
    for (std::size_t s = 0; s < mc_samples; ++s) {
      const auto z = latent_from_message(toy, m, NoiseDraw::draw(Z, rng));
      std::copy(z.begin(), z.end(), Zs.row(static_cast<Eigen::Index>(s)).data());
    }
    const Batch Y = forward_mlp(c.decoder.plan, c.decoder.params, Zs).output;
    const Eigen::VectorXd sp = Y.unaryExpr([](double v) { return detail::softplus(v); }).rowwise().sum();
    const Eigen::MatrixXd L = (Y * X.transpose()).colwise() - sp;  // mc_samples x observations
    for (Eigen::Index i = 0; i < L.cols(); ++i) {
      const double hi = L.col(i).maxCoeff();
      log_px(i, static_cast<Eigen::Index>(mi)) = hi + std::log((L.col(i).array() - hi).exp().sum()) - log_s;
    }
  }

  const double nu = c.prior.nu;
  std::vector<double> log_prior(n_msg);
  for (std::size_t mi = 0; mi < n_msg; ++mi) {
    const BitWord m = BitWord::from_index(mi, M);
    for (std::size_t j = 0; j < M; ++j) log_prior[mi] += m[j] ? std::log(nu) : std::log1p(-nu);
  }
  std::vector<double> lj(n_msg);
  for (std::size_t i = 0; i < observations; ++i) {
    for (std::size_t mi = 0; mi < n_msg; ++mi) {
      lj[mi] = log_prior[mi] + log_px(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(mi));
    }
    const double lse = detail::log_sum_exp(lj);
    std::vector<double> post(n_msg);
    for (std::size_t mi = 0; mi < n_msg; ++mi) post[mi] = std::exp(lj[mi] - lse);
    t.posterior.push_back(std::move(post));
  }
  return t;
}

GapEstimate gap_from_table(const GapTable& table, const QFamily& q) {
  const std::size_t N = table.posterior.size();
  if (N == 0) throw DomainError("gap_bound_check: empty table");
  std::vector<double> diff(N), kl(N), a_true(N), a_var(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& p = table.posterior[i];
    const std::vector<double> qi = q(i, p);
    require_same_length(qi.size(), p.size(), "gap_bound_check family");
    double total = 0.0;
    for (double v : qi) {
      if (!(v >= 0.0)) throw DomainError("gap_bound_check: negative variational probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("gap_bound_check: variational posterior does not sum to 1");
    const auto best_p = std::max_element(p.begin(), p.end());
    const auto best_q = std::max_element(qi.begin(), qi.end());
    a_true[i] = *best_p;
    a_var[i] = p[static_cast<std::size_t>(best_q - qi.begin())];
    diff[i] = a_true[i] - a_var[i];
    double k = 0.0;
    for (std::size_t m = 0; m < p.size(); ++m) {
      if (qi[m] > 0.0) k += qi[m] * (std::log(qi[m]) - std::log(std::max(p[m], 1e-300)));
    }
    kl[i] = std::max(0.0, k);
  }
  GapEstimate g;
  g.observations = N;
  g.acc_true = moments(a_true).mean;
  g.acc_var = moments(a_var).mean;
  const Moments d = moments(diff);
  g.delta = d.mean;
  g.delta_stderr = d.stderr_;
  const Moments k = moments(kl);
  g.kl_hat = k.mean;
  g.kl_stderr = k.stderr_;
  g.bound = kl_bound(g.kl_hat);
  g.bound_stderr = g.bound > 0.0 ? std::exp(-2.0 * g.kl_hat) / g.bound * g.kl_stderr : 0.0;
  const double delta_lo = std::max(0.0, g.delta - 3.0 * g.delta_stderr);
  const double bound_hi = kl_bound(g.kl_hat + 3.0 * g.kl_stderr);
  g.violated = delta_lo * delta_lo > bound_hi * bound_hi;
  return g;
}

GapEstimate gap_bound_check(const Model& toy, const QFamily& q, std::size_t observations, std::size_t mc_samples,
                            Rng& rng) {
  return gap_from_table(build_gap_table(toy, observations, mc_samples, rng), q);
}

QFamily model_family(const Model& toy, const GapTable& table) {
  std::vector<std::vector<double>> cache;
  cache.reserve(table.x.size());
  const std::size_t n_msg = std::size_t{1} << table.message_bits;
  for (const auto& x : table.x) {
    const Posterior post = infer(toy, x);
    std::vector<double> q(n_msg);
    for (std::size_t mi = 0; mi < n_msg; ++mi) {
      const BitWord m = BitWord::from_index(mi, table.message_bits);
      double l = 0.0;
      for (std::size_t j = 0; j < m.size(); ++j) l += m[j] ? post.q_m.log_p1(j) : post.q_m.log_p0(j);
      q[mi] = l;
    }
    const double lse = detail::log_sum_exp(q);
    for (auto& v : q) v = std::exp(v - lse);
    cache.push_back(std::move(q));
  }
  return [cache = std::move(cache)](std::size_t i, std::span<const double>) { return cache.at(i); };
}

// ---------------------------------------------------------------------------

std::string MetricReport::to_json() const {
  nlohmann::json j{{"ber", ber},
                   {"ber_map", ber_map},
                   {"wer", wer},
                   {"wer_map", wer_map},
                   {"psnr_mean", finite_or_null(psnr_mean)},
                   {"entropy_mean", entropy_mean},
                   {"ll_mean", finite_or_null(ll_mean)},
                   {"ess_mean", ess_mean}};
  return j.dump(2);
}

std::string MetricReport::csv_header() { return "ber,ber_map,wer,wer_map,psnr_mean,entropy_mean,ll_mean,ess_mean"; }

std::string MetricReport::to_csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", ber, ber_map, wer, wer_map,
                psnr_mean, entropy_mean, ll_mean, ess_mean);
  return buf;
}

MetricReport evaluate(const Model& model, const Batch& test, const EvalOptions& opt, const Rng& rng) {
  MetricReport r;
  const ErrorReport e = ber_wer(model, opt.trials, rng.split(0));
  r.ber = e.ber_sampled;
  r.ber_map = e.ber_map;
  r.wer = e.wer_sampled;
  r.wer_map = e.wer_map;

  const auto n = std::min<std::size_t>(opt.max_items, static_cast<std::size_t>(test.rows()));
  if (n == 0) return r;
  Rng recon_rng = rng.split(1);
  Rng ll_rng = rng.split(2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> x(test.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(test.cols()));
    const Reconstruction rec = reconstruct(model, x, NoiseDraw::draw(latent_dim(model), recon_rng));
    r.psnr_mean += psnr(x, rec.x);
    r.entropy_mean += posterior_entropy(rec.q_m);
    if (opt.ll_samples > 0) {
      const ImportanceEstimate ll = loglik_importance(model, x, opt.ll_samples, ll_rng);
      r.ll_mean += ll.value;
      r.ess_mean += ll.ess;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  r.psnr_mean *= inv;
  r.entropy_mean *= inv;
  r.ll_mean *= inv;
  r.ess_mean *= inv;
  return r;
}

std::string gap_to_json(const GapEstimate& g) {
  nlohmann::json j{{"acc_true", g.acc_true},       {"acc_var", g.acc_var},     {"delta", g.delta},
                   {"delta_stderr", g.delta_stderr}, {"kl_hat", g.kl_hat},       {"kl_stderr", g.kl_stderr},
                   {"bound", g.bound},             {"bound_stderr", g.bound_stderr}, {"violated", g.violated},
                   {"observations", g.observations}};
  return j.dump(2);
}

}  // namespace cdvae
