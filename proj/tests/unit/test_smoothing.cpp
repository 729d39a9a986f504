#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cdvae/errors.hpp"
#include "cdvae/smoothing.hpp"

using namespace cdvae;

namespace {

// Composite Simpson on [a, b].
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST(Smoothing, NormalizerReference) {
  SmoothingParams p(15.0);
  EXPECT_NEAR(1.0 / p.z_norm(), 15.000004588536211, 1e-12);
  EXPECT_THROW(SmoothingParams(0.0), DomainError);
  EXPECT_THROW(SmoothingParams(-1.0), DomainError);
}

TEST(Smoothing, ConditionalPdfIntegratesToOne) {
  for (double beta : {1.0, 5.0, 15.0, 30.0}) {
    SmoothingParams p(beta);
    for (int bit : {0, 1}) {
      EXPECT_NEAR(simpson([&](double z) { return conditional_pdf(z, bit, p); }, 0.0, 1.0), 1.0, 1e-9);
    }
  }
}

TEST(Smoothing, DomainChecks) {
  SmoothingParams p;
  EXPECT_THROW(conditional_pdf(-0.1, 1, p), DomainError);
  EXPECT_THROW(conditional_pdf(0.5, 2, p), DomainError);
  EXPECT_THROW(conditional_inverse_cdf(0, 1.0, p), DomainError);
  EXPECT_THROW(mixture_inverse_cdf(0.0, 0.5, p), DomainError);
}

TEST(Smoothing, ConditionalInverseReference) {
  SmoothingParams p(15.0);
  EXPECT_NEAR(conditional_inverse_cdf(0, 0.5, p), 0.046209791643844773, 1e-14);
  for (double rho : {0.01, 0.3, 0.5, 0.9, 0.999}) {
    for (int bit : {0, 1}) {
      EXPECT_NEAR(conditional_cdf(conditional_inverse_cdf(bit, rho, p), bit, p), rho, 1e-12);
    }
  }
}

TEST(Smoothing, BitOneIsMirrorOfBitZero) {
  SmoothingParams p(7.0);
  for (double rho : {0.05, 0.5, 0.8}) {
    EXPECT_NEAR(conditional_inverse_cdf(1, rho, p), 1.0 - conditional_inverse_cdf(0, 1.0 - rho, p), 1e-12);
  }
}

TEST(Mixture, CdfReference) {
  SmoothingParams p(15.0);
  EXPECT_NEAR(mixture_cdf(0.3, 0.2, p), 0.66515100710674165, 1e-14);
  EXPECT_NEAR(simpson([&](double z) { return mixture_pdf(0.3, z, p); }, 0.0, 0.2), 0.66515100710674165, 1e-9);
  EXPECT_NEAR(std::log(mixture_pdf(0.5, 0.5, p)), -4.7919494929954226, 1e-12);
}

TEST(Mixture, InverseReference) {
  EXPECT_NEAR(mixture_inverse_cdf(0.3, 0.7, SmoothingParams(15.0)), 0.52822716962581291, 1e-12);
  EXPECT_NEAR(mixture_inverse_cdf(0.9, 0.05, SmoothingParams(5.0)), 0.11866463842985604, 1e-12);
}

TEST(Mixture, InverseRoundTripGrid) {
  for (double beta : {1.0, 5.0, 15.0, 30.0}) {
    SmoothingParams p(beta);
    for (int qi = 1; qi <= 99; ++qi) {
      const double q = qi / 100.0;
      for (int r = 0; r < 100; ++r) {
        const double rho = (r + 0.5) / 100.0;
        const double z = mixture_inverse_cdf(q, rho, p);
        ASSERT_GE(z, 0.0);
        ASSERT_LE(z, 1.0);
        ASSERT_NEAR(mixture_cdf(q, z, p), rho, 1e-9) << "q=" << q << " beta=" << beta << " rho=" << rho;
      }
    }
  }
}

TEST(Mixture, ExtremeProbabilitiesStayInRange) {
  SmoothingParams p(30.0);
  for (double q : {kProbClamp, 1.0 - kProbClamp}) {
    for (double rho : {kNoiseClip, 0.5, 1.0 - kNoiseClip}) {
      const double z = mixture_inverse_cdf(q, rho, p);
      EXPECT_TRUE(std::isfinite(z));
      EXPECT_GE(z, 0.0);
      EXPECT_LE(z, 1.0);
    }
  }
}

TEST(Mixture, ImplicitGradientMatchesFiniteDifference) {
  SmoothingParams p(15.0);
  const double h = 1e-6;
  for (double q : {0.05, 0.3, 0.5, 0.8, 0.97}) {
    for (double rho : {0.1, 0.45, 0.9}) {
      const auto g = mixture_inverse_cdf_grad(q, rho, p);
      const double dq = (mixture_inverse_cdf(q + h, rho, p) - mixture_inverse_cdf(q - h, rho, p)) / (2 * h);
      const double dr = (mixture_inverse_cdf(q, rho + h, p) - mixture_inverse_cdf(q, rho - h, p)) / (2 * h);
      EXPECT_NEAR(g.z, mixture_inverse_cdf(q, rho, p), 1e-15);
      EXPECT_NEAR(g.dz_dq, dq, 1e-5 * (1 + std::abs(dq)));
      EXPECT_NEAR(g.dz_drho, dr, 1e-5 * (1 + std::abs(dr)));
      EXPECT_GE(g.dz_dq, 0.0);
    }
  }
}

TEST(Sampler, KernelAgreesWithScalarPath) {
  SmoothingParams p(15.0);
  SoftWord q{0.1, 0.5, 0.9};
  auto noise = NoiseDraw::from_values({0.2, 0.6, 0.95});
  const auto s = sample_smoothed(q, noise, p);
  ASSERT_EQ(s.z.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto g = mixture_inverse_cdf_grad(q.prob(j), noise.rho[j], p);
    EXPECT_DOUBLE_EQ(s.z[j], g.z);
    EXPECT_DOUBLE_EQ(s.dz_dq[j], g.dz_dq);
  }
  EXPECT_THROW(sample_smoothed(q, NoiseDraw::from_values({0.5}), p), ShapeError);
}

TEST(Noise, FromValuesValidates) {
  EXPECT_THROW(NoiseDraw::from_values({0.5, 1.5}), DomainError);
  Rng rng(4);
  const auto n = NoiseDraw::draw(10, rng);
  EXPECT_EQ(n.size(), 10u);
  EXPECT_EQ(n.seed, 4u);
  for (double r : n.rho) {
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}
