#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/errors.hpp"
#include "cdvae/rng.hpp"

using namespace cdvae;

TEST(BitWord, IndexRoundTrip) {
  for (std::uint64_t i = 0; i < 32; ++i) {
    const auto w = BitWord::from_index(i, 5);
    EXPECT_EQ(w.size(), 5u);
    EXPECT_EQ(w.to_index(), i);
  }
  EXPECT_EQ(BitWord::from_index(4, 3), BitWord({1, 0, 0}));
}

TEST(BitWord, RejectsBadInput) {
  EXPECT_THROW(BitWord(std::vector<std::uint8_t>{}), Error);
  EXPECT_THROW(BitWord({0, 2}), DomainError);
}

TEST(SoftWord, ClampsBothEnds) {
  SoftWord q{0.0, 1.0, 0.25};
  EXPECT_DOUBLE_EQ(q.prob(0), kProbClamp);
  EXPECT_DOUBLE_EQ(q.prob(1), 1.0 - kProbClamp);
  EXPECT_DOUBLE_EQ(q.prob(2), 0.25);
  EXPECT_NEAR(q.log_p1(2), std::log(0.25), 1e-15);
  EXPECT_NEAR(q.log_p0(2), std::log(0.75), 1e-15);
}

TEST(SoftWord, FromLogitsStaysFinite) {
  std::vector<double> logits{-800.0, 800.0, 0.0};
  const auto q = SoftWord::from_logits(logits);
  EXPECT_DOUBLE_EQ(q.prob(0), kProbClamp);
  EXPECT_DOUBLE_EQ(q.prob(1), 1.0 - kProbClamp);
  EXPECT_DOUBLE_EQ(q.prob(2), 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isfinite(q.log_p0(i)));
    EXPECT_TRUE(std::isfinite(q.log_p1(i)));
  }
}

TEST(CodeSpec, Shape) {
  CodeSpec c(5, 4);
  EXPECT_EQ(c.code_len(), 20u);
  EXPECT_DOUBLE_EQ(c.rate(), 0.25);
  EXPECT_EQ(c.parent(7), 1u);
  EXPECT_THROW(CodeSpec(0, 3), Error);
  EXPECT_THROW(CodeSpec(3, 0), Error);
}

TEST(HardEncode, RepeatsEachBit) {
  CodeSpec c(3, 2);
  EXPECT_EQ(hard_encode(c, BitWord({1, 0, 1})), BitWord({1, 1, 0, 0, 1, 1}));
  EXPECT_THROW(hard_encode(c, BitWord({1, 0})), ShapeError);
}

TEST(SoftDecode, ReferenceValues) {
  // mpmath, 50 digits
  EXPECT_NEAR(soft_decode(CodeSpec(1, 2), SoftWord{0.9, 0.8}).prob(0), 0.97297297297297297, 1e-15);
  EXPECT_NEAR(soft_decode(CodeSpec(1, 3), SoftWord{0.6, 0.6, 0.6}).prob(0), 0.77142857142857143, 1e-15);
}

TEST(SoftDecode, SymmetricAndMonotone) {
  CodeSpec c(1, 3);
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const double a = rng.uniform(), b = rng.uniform(), d = rng.uniform();
    const double q = soft_decode(c, SoftWord{a, b, d}).prob(0);
    const double flipped = soft_decode(c, SoftWord{1 - a, 1 - b, 1 - d}).prob(0);
    EXPECT_NEAR(q + flipped, 1.0, 1e-9);
    const double up = soft_decode(c, SoftWord{std::min(a + 0.05, 1.0), b, d}).prob(0);
    EXPECT_GE(up + 1e-15, q);
  }
}

TEST(SoftDecode, ExtremeInputsNoNaN) {
  CodeSpec c(2, 40);
  std::vector<double> q(80, 1.0);
  for (std::size_t j = 40; j < 80; ++j) q[j] = 0.0;
  const auto m = soft_decode(c, SoftWord(q));
  EXPECT_DOUBLE_EQ(m.prob(0), 1.0 - kProbClamp);
  EXPECT_DOUBLE_EQ(m.prob(1), kProbClamp);
}

TEST(SoftDecode, SingleCopyIsIdentity) {
  CodeSpec c(4, 1);
  SoftWord q{0.1, 0.5, 0.77, 0.999};
  const auto d = soft_decode(c, q);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.prob(i), q.prob(i));
}

TEST(SoftEncode, CopiesProbabilities) {
  CodeSpec c(2, 3);
  const auto e = soft_encode(c, SoftWord{0.2, 0.9});
  ASSERT_EQ(e.size(), 6u);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(e.prob(j), j < 3 ? 0.2 : 0.9);
}

TEST(SoftDecode, VjpMatchesFiniteDifference) {
  CodeSpec c(2, 3);
  std::vector<double> q{0.3, 0.6, 0.8, 0.45, 0.2, 0.7};
  std::vector<double> m(2), gm{0.7, -1.3}, gc(6);
  kernels::soft_decode(c, q, m);
  kernels::soft_decode_vjp(c, q, m, gm, gc);
  const double h = 1e-6;
  for (std::size_t j = 0; j < 6; ++j) {
    auto qp = q, qn = q;
    qp[j] += h;
    qn[j] -= h;
    std::vector<double> mp(2), mn(2);
    kernels::soft_decode(c, qp, mp);
    kernels::soft_decode(c, qn, mn);
    const double num = (gm[0] * (mp[0] - mn[0]) + gm[1] * (mp[1] - mn[1])) / (2 * h);
    EXPECT_NEAR(gc[j], num, 1e-7);
  }
}

TEST(MapBits, TieGoesToZero) {
  EXPECT_EQ(map_bits(SoftWord{0.5, 0.51, 0.49}), BitWord({0, 1, 0}));
}

TEST(MinDistance, DecodesCorruptedRepetition) {
  CodeSpec c(2, 3);
  const auto book = enumerate_codebook(c);
  EXPECT_EQ(book.size(), 4u);
  const auto d = min_distance_decode(book, BitWord({1, 0, 1, 0, 0, 1}));
  EXPECT_EQ(d.word, BitWord({1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(d.distance, 2u);
  EXPECT_EQ(d.index, 2u);
}

TEST(Codebook, EnumerationLimit) {
  EXPECT_THROW(enumerate_codebook(CodeSpec(kMaxEnumerableBits + 1, 1)), CapacityError);
}

TEST(Codebook, RandomIsDistinctAndSeeded) {
  const auto a = random_codebook(4, 10, 9);
  const auto b = random_codebook(4, 10, 9);
  ASSERT_EQ(a.size(), 16u);
  EXPECT_EQ(a.words(), b.words());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) EXPECT_NE(a[i], a[j]);
  }
}

TEST(Xor, HardAlgebra) {
  const BitWord a({1, 0, 1, 1}), b({0, 0, 1, 0});
  const auto c = xor_combine(a, b);
  EXPECT_EQ(c, BitWord({1, 0, 0, 1}));
  EXPECT_EQ(xor_combine(c, a), b);
  EXPECT_EQ(xor_combine(a, a), BitWord::zeros(4));
}

TEST(Xor, SoftRecombineOfHardBitsIsHardXor) {
  for (std::uint64_t i = 0; i < 16; ++i) {
    for (std::uint64_t j = 0; j < 16; ++j) {
      const auto a = BitWord::from_index(i, 4), b = BitWord::from_index(j, 4);
      const auto r = posterior_xor_recombine(SoftWord::from_bits(a), SoftWord::from_bits(b));
      EXPECT_EQ(map_bits(r), xor_combine(a, b));
    }
  }
}

TEST(Xor, RecombineMatchesEnumeration) {
  const double a = 0.3, b = 0.85;
  const double expected = a * (1 - b) + (1 - a) * b;
  EXPECT_NEAR(posterior_xor_recombine(SoftWord{a}, SoftWord{b}).prob(0), expected, 1e-15);
}

TEST(Xor, ResidualOfCertainBranchOneIsExact) {
  // With m1 known the residual recovers m2 from m1 xor m2.
  for (double q12 : {0.1, 0.4, 0.75}) {
    EXPECT_NEAR(posterior_xor_residual(SoftWord{q12}, SoftWord{0.0}).prob(0), q12, 1e-6);
    EXPECT_NEAR(posterior_xor_residual(SoftWord{q12}, SoftWord{1.0}).prob(0), 1 - q12, 1e-6);
  }
}

TEST(Xor, ShapeMismatchThrows) {
  EXPECT_THROW(posterior_xor_recombine(SoftWord{0.1, 0.2}, SoftWord{0.3}), ShapeError);
  EXPECT_THROW(xor_combine(BitWord({1}), BitWord({1, 0})), ShapeError);
}

TEST(Hamming, Counts) { EXPECT_EQ(hamming_distance(BitWord({1, 0, 1}), BitWord({0, 0, 0})), 2u); }
