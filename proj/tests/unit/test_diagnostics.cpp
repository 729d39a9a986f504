#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "cdvae/diagnostics.hpp"
#include "cdvae/errors.hpp"
#include "test_support.hpp"

using namespace cdvae;

TEST(Psnr, ReferenceAndIdentity) {
  const std::vector<double> x{0.0, 1.0}, y{0.1, 0.9};
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_THROW(psnr(x, std::vector<double>{0.0}), ShapeError);
}

TEST(Entropy, Nats) {
  EXPECT_NEAR(posterior_entropy(SoftWord{0.9}), 0.32508297339144824, 1e-14);
  EXPECT_NEAR(posterior_entropy(SoftWord{0.5, 0.5}), 2 * std::log(2.0), 1e-14);
}

TEST(BerWer, SeededAndOrdered) {
  const Model m = test::toy_model(ModelKind::kCoded, 3, 2);
  const auto a = ber_wer(m, 300, Rng(4));
  const auto b = ber_wer(m, 300, Rng(4));
  EXPECT_EQ(a.ber_map, b.ber_map);
  EXPECT_EQ(a.wer_sampled, b.wer_sampled);
  EXPECT_EQ(a.trials, 300u);
  for (double v : {a.ber_sampled, a.ber_map, a.wer_sampled, a.wer_map}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GE(a.wer_map + 1e-15, a.ber_map);
  EXPECT_GE(a.wer_sampled + 1e-15, a.ber_sampled);
}

TEST(LogLikelihood, ImportanceBoundDominatesMeanLogWeight) {
  const Model m = test::toy_model(ModelKind::kUncoded, 3, 1);
  const auto x = test::toy_x(8);
  Rng rng(6);
  for (int r = 0; r < 20; ++r) {
    const auto est = loglik_importance(m, x, 50, rng);
    double mean_log = 0.0;
    for (double lw : est.log_weights) mean_log += lw / 50.0;
    EXPECT_GE(est.value, mean_log);
  }
  Rng a(1), b(1);
  EXPECT_EQ(loglik_importance(m, x, 10, a).value, loglik_importance(m, x, 10, b).value);
}

TEST(Gap, ExactPosteriorHasNoGap) {
  GapTable t;
  t.message_bits = 1;
  t.posterior = {{0.7, 0.3}, {0.2, 0.8}};
  t.x = {{0.0}, {1.0}};
  t.truth = {BitWord({0}), BitWord({1})};
  const auto g = gap_from_table(t, [](std::size_t, std::span<const double> p) {
    return std::vector<double>(p.begin(), p.end());
  });
  EXPECT_NEAR(g.delta, 0.0, 1e-15);
  EXPECT_NEAR(g.kl_hat, 0.0, 1e-15);
  EXPECT_NEAR(g.acc_true, 0.75, 1e-15);
  EXPECT_FALSE(g.violated);
}

TEST(Gap, HandComputedSingleObservation) {
  GapTable t;
  t.message_bits = 1;
  t.posterior = {{0.7, 0.3}};
  t.x = {{0.0}};
  t.truth = {BitWord({0})};
  const auto g = gap_from_table(t, [](std::size_t, std::span<const double>) { return std::vector<double>{0.4, 0.6}; });
  const double kl = 0.4 * std::log(0.4 / 0.7) + 0.6 * std::log(0.6 / 0.3);
  EXPECT_NEAR(g.acc_true, 0.7, 1e-15);
  EXPECT_NEAR(g.acc_var, 0.3, 1e-15);
  EXPECT_NEAR(g.delta, 0.4, 1e-15);
  EXPECT_NEAR(g.kl_hat, kl, 1e-15);
  EXPECT_NEAR(g.bound, std::sqrt(1 - std::exp(-2 * kl)), 1e-15);
  EXPECT_LE(g.delta * g.delta, g.bound * g.bound);
}

TEST(Gap, BoundReference) {
  GapTable t;
  t.message_bits = 1;
  t.posterior = {{0.5, 0.5}};
  t.x = {{0.0}};
  t.truth = {BitWord({0})};
  const double q0 = 0.5 * (1 + std::sqrt(1 - std::exp(-1.0)));
  const auto g = gap_from_table(t, [&](std::size_t, std::span<const double>) { return std::vector<double>{q0, 1 - q0}; });
  const double kl = q0 * std::log(2 * q0) + (1 - q0) * std::log(2 * (1 - q0));
  EXPECT_NEAR(g.bound, std::sqrt(1 - std::exp(-2 * kl)), 1e-14);
  EXPECT_NEAR(std::sqrt(1 - std::exp(-2 * 0.5)), 0.79506009762065011, 1e-15);
}

TEST(Gap, FamilyValidation) {
  GapTable t;
  t.message_bits = 1;
  t.posterior = {{0.5, 0.5}};
  t.x = {{0.0}};
  t.truth = {BitWord({0})};
  EXPECT_THROW(gap_from_table(t, [](std::size_t, std::span<const double>) { return std::vector<double>{0.5, 0.6}; }),
               DomainError);
  EXPECT_THROW(gap_from_table(t, [](std::size_t, std::span<const double>) { return std::vector<double>{1.0}; }),
               ShapeError);
}

TEST(Gap, TableFromToy) {
  const Model toy = test::toy_model(ModelKind::kUncoded, 2, 1);
  Rng rng(3);
  const auto t = build_gap_table(toy, 40, 500, rng);
  ASSERT_EQ(t.posterior.size(), 40u);
  for (const auto& p : t.posterior) {
    ASSERT_EQ(p.size(), 4u);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const auto g = gap_from_table(t, model_family(toy, t));
  EXPECT_GE(g.kl_hat, 0.0);
  EXPECT_FALSE(g.violated);
  Rng r2(1);
  EXPECT_THROW(build_gap_table(test::toy_model(ModelKind::kUncoded, 5, 1), 4, 4, r2), CapacityError);
}

TEST(Metrics, JsonNullsNonFinite) {
  MetricReport r;
  r.psnr_mean = std::numeric_limits<double>::infinity();
  r.ber = 0.25;
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_TRUE(j["psnr_mean"].is_null());
  EXPECT_DOUBLE_EQ(j["ber"].get<double>(), 0.25);
  EXPECT_EQ(MetricReport::csv_header().substr(0, 4), "ber,");
}

TEST(Metrics, EvaluateRuns) {
  const Model m = test::toy_model(ModelKind::kHier, 2, 2);
  Batch x(3, 8);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 8; ++k) x(i, k) = (i + k) % 3 / 2.0;
  EvalOptions opt;
  opt.trials = 50;
  opt.ll_samples = 20;
  const auto r = evaluate(m, x, opt, Rng(2));
  EXPECT_TRUE(std::isfinite(r.ll_mean));
  EXPECT_GT(r.entropy_mean, 0.0);
  EXPECT_GE(r.ess_mean, 1.0 - 1e-12);
  const auto again = evaluate(m, x, opt, Rng(2));
  EXPECT_EQ(r.to_csv_row(), again.to_csv_row());
}
