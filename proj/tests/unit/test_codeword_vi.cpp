#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cdvae/codeword_vi.hpp"
#include "cdvae/errors.hpp"
#include "test_support.hpp"

using namespace cdvae;

namespace {

CodedDVAE toy_word_model() {
  auto m = std::get<CodedDVAE>(test::toy_model(ModelKind::kCoded, 2, 2));
  return m;
}

}  // namespace

TEST(CategoricalPosterior, NormalizedAndMatchesSoftDecode) {
  const CodeSpec code(3, 2);
  const auto book = enumerate_codebook(code);
  const SoftWord q{0.9, 0.6, 0.2, 0.3, 0.55, 0.95};
  const auto post = categorical_posterior(q, book);
  double total = 0.0;
  std::vector<double> marg(3, 0.0);
  for (std::size_t i = 0; i < post.size(); ++i) {
    total += post.prob(i);
    const auto msg = BitWord::from_index(i, 3);
    for (std::size_t k = 0; k < 3; ++k) marg[k] += msg[k] * post.prob(i);
  }
  EXPECT_NEAR(total, 1.0, 1e-14);
  // for a repetition code the word posterior marginals are the soft-decoded bits
  const auto qm = soft_decode(code, q);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(marg[k], qm.prob(k), 1e-14);
}

TEST(CategoricalPosterior, RejectsWrongWidth) {
  const auto book = enumerate_codebook(CodeSpec(2, 2));
  EXPECT_THROW(categorical_posterior(SoftWord{0.5, 0.5}, book), ShapeError);
}

TEST(CategoricalPosterior, SamplingFrequencies) {
  const auto book = enumerate_codebook(CodeSpec(2, 1));
  const auto post = categorical_posterior(SoftWord{0.8, 0.3}, book);
  Rng rng(12);
  std::vector<double> counts(4, 0.0);
  const int n = 200000;
  for (int t = 0; t < n; ++t) counts[sample_codeword(post, rng).first] += 1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double p = post.prob(i);
    EXPECT_NEAR(counts[i] / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
  }
}

TEST(Score, ZeroMeanUnderPosterior) {
  const auto book = random_codebook(2, 5, 3);
  const SoftWord q{0.2, 0.7, 0.4, 0.9, 0.5};
  const auto post = categorical_posterior(q, book);
  const Batch s = codeword_score_wrt_probs(q, post);
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    double e = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) e += post.prob(static_cast<std::size_t>(i)) * s(i, j);
    EXPECT_NEAR(e, 0.0, 1e-12);
  }
}

TEST(Score, MatchesFiniteDifferenceOfLogProb) {
  const auto book = random_codebook(2, 4, 8);
  std::vector<double> q{0.2, 0.7, 0.4, 0.9};
  const auto post = categorical_posterior(SoftWord(q), book);
  const Batch s = codeword_score_wrt_probs(SoftWord(q), post);
  const double h = 1e-6;
  for (std::size_t j = 0; j < q.size(); ++j) {
    auto qp = q, qn = q;
    qp[j] += h;
    qn[j] -= h;
    const auto pp = categorical_posterior(SoftWord(qp), book);
    const auto pn = categorical_posterior(SoftWord(qn), book);
    for (std::size_t i = 0; i < book.size(); ++i) {
      const double num = (pp.log_prob(i) - pn.log_prob(i)) / (2 * h);
      EXPECT_NEAR(s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), num, 1e-7);
    }
  }
}

TEST(ElboWord, KlEstimateConsistent) {
  const auto m = toy_word_model();
  const auto book = enumerate_codebook(m.code);
  const auto x = test::toy_x(8);
  const auto q_u = encoder_posterior(Model(m), x);
  const auto post = categorical_posterior(q_u, book);
  Rng rng(5);
  const auto e = elbo_word(m, x, post, 20000, rng);
  double kl = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i) kl += post.prob(i) * (post.log_prob(i) + std::log(4.0));
  EXPECT_NEAR(e.kl_exact, kl, 1e-14);
  EXPECT_GE(e.kl_exact, 0.0);
  EXPECT_NEAR(e.kl_mc, e.kl_exact, 4.0 * e.kl_mc_stderr + 1e-12);
  EXPECT_NEAR(e.elbo, e.recon - e.kl_exact, 1e-14);
  EXPECT_THROW(elbo_word(m, x, post, 0, rng), DomainError);
}

TEST(Reinforce, DeterministicGivenSeed) {
  const auto m = toy_word_model();
  const auto book = enumerate_codebook(m.code);
  const auto x = test::toy_x(8);
  Rng a(1), b(1);
  const auto g1 = reinforce_loo_grads(m, x, book, 8, a);
  const auto g2 = reinforce_loo_grads(m, x, book, 8, b);
  EXPECT_EQ(g1.encoder.flatten(), g2.encoder.flatten());
  EXPECT_EQ(g1.decoder.flatten(), g2.decoder.flatten());
  EXPECT_EQ(g1.f.size(), 8u);
  Rng c(1);
  EXPECT_THROW(reinforce_loo_grads(m, x, book, 1, c), DomainError);
}

TEST(Reinforce, ConstantObjectiveGivesZeroLooGradient) {
  // One codeword means f is identical across draws, so LOO centring cancels it.
  const auto m = toy_word_model();
  const Codebook book({BitWord({1, 1, 0, 0})}, 1);
  Rng rng(2);
  const auto g = reinforce_loo_grads(m, test::toy_x(8), book, 6, rng);
  for (double v : g.encoder.flatten()) EXPECT_EQ(v, 0.0);
}
