#include "cdvae/coding.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "cdvae/errors.hpp"
#include "cdvae/numeric.hpp"

namespace cdvae {

namespace {

const double kLogLo = std::log(kProbClamp);
const double kLogHi = std::log1p(-kProbClamp);

bool clamp_active(double p) noexcept { return p <= kProbClamp || p >= 1.0 - kProbClamp; }

void check_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(want) + ", got " +
                     std::to_string(got));
  }
}

}  // namespace

double clamp_prob(double p) noexcept { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// ---------------------------------------------------------------------------
// BitWord

BitWord::BitWord(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw ShapeError("BitWord: empty word");
  for (auto b : bits_) {
    if (b > 1) throw DomainError("BitWord: element outside {0,1}");
  }
}

BitWord BitWord::zeros(std::size_t n) { return BitWord(std::vector<std::uint8_t>(n, 0)); }

BitWord BitWord::from_index(std::uint64_t index, std::size_t n) {
  if (n == 0 || n > 64) throw ShapeError("BitWord::from_index: width must be in [1, 64]");
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[n - 1 - i] = static_cast<std::uint8_t>((index >> i) & 1U);
  return BitWord(std::move(bits));
}

std::uint64_t BitWord::to_index() const {
  if (bits_.size() > 64) throw CapacityError("BitWord::to_index: word wider than 64 bits");
  std::uint64_t v = 0;
  for (auto b : bits_) v = (v << 1) | b;
  return v;
}

std::vector<double> BitWord::as_probs() const { return {bits_.begin(), bits_.end()}; }

// ---------------------------------------------------------------------------
// SoftWord

SoftWord::SoftWord(std::span<const double> probs) {
  if (probs.empty()) throw ShapeError("SoftWord: empty word");
  probs_.resize(probs.size());
  log_p1_.resize(probs.size());
  log_p0_.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw DomainError("SoftWord: probability outside [0,1]");
    const double p = clamp_prob(probs[i]);
    probs_[i] = p;
    log_p1_[i] = std::log(p);
    log_p0_[i] = std::log1p(-p);
  }
}

SoftWord::SoftWord(std::initializer_list<double> probs)
    : SoftWord(std::span<const double>(probs.begin(), probs.size())) {}

void SoftWord::set(std::size_t i, double log_p1, double log_p0) {
  if (log_p1 > kLogHi || log_p0 < kLogLo) {
    log_p1 = kLogHi;
    log_p0 = kLogLo;
  } else if (log_p1 < kLogLo || log_p0 > kLogHi) {
    log_p1 = kLogLo;
    log_p0 = kLogHi;
  }
  log_p1_[i] = log_p1;
  log_p0_[i] = log_p0;
  probs_[i] = std::exp(log_p1);
}

SoftWord SoftWord::from_logits(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("SoftWord: empty word");
  SoftWord w;
  w.probs_.resize(logits.size());
  w.log_p1_.resize(logits.size());
  w.log_p0_.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isnan(logits[i])) throw NumericError("SoftWord::from_logits: NaN logit");
    w.set(i, -detail::softplus(-logits[i]), -detail::softplus(logits[i]));
  }
  return w;
}

SoftWord SoftWord::constant(std::size_t n, double p) { return SoftWord(std::vector<double>(n, p)); }

SoftWord SoftWord::from_bits(const BitWord& w) { return SoftWord(w.as_probs()); }

// ---------------------------------------------------------------------------
// CodeSpec / Codebook

CodeSpec::CodeSpec(std::size_t info_len, std::size_t repeat) : info_len_(info_len), repeat_(repeat) {
  if (info_len == 0 || repeat == 0) throw DomainError("CodeSpec: M and L must be positive");
}

Codebook::Codebook(std::vector<BitWord> words, std::size_t index_len)
    : words_(std::move(words)), index_len_(index_len) {
  if (words_.empty()) throw ShapeError("Codebook: empty codebook");
  const std::size_t len = words_.front().size();
  std::set<std::vector<std::uint8_t>> seen;
  for (const auto& w : words_) {
    if (w.size() != len) throw ShapeError("Codebook: words of unequal length");
    if (!seen.emplace(w.bits().begin(), w.bits().end()).second) {
      throw DomainError("Codebook: duplicate codeword");
    }
  }
}

// ---------------------------------------------------------------------------
// Encoding / decoding

BitWord hard_encode(const CodeSpec& code, const BitWord& m) {
  check_len(m.size(), code.info_len(), "hard_encode");
  std::vector<std::uint8_t> c(code.code_len());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = m[code.parent(j)];
  return BitWord(std::move(c));
}

SoftWord soft_encode(const CodeSpec& code, const SoftWord& q_m) {
  check_len(q_m.size(), code.info_len(), "soft_encode");
  std::vector<double> q_c(code.code_len());
  kernels::soft_encode(code, q_m.probs(), q_c);
  return SoftWord(q_c);
}

SoftWord soft_decode(const CodeSpec& code, const SoftWord& q_c) {
  check_len(q_c.size(), code.code_len(), "soft_decode");
  const std::size_t L = code.repeat();
  if (L == 1) return q_c;
  std::vector<double> logits(code.info_len());
  for (std::size_t k = 0; k < code.info_len(); ++k) {
    double ones = 0.0;
    double zeros = 0.0;
    for (std::size_t j = k * L; j < (k + 1) * L; ++j) {
      ones += q_c.log_p1(j);
      zeros += q_c.log_p0(j);
    }
    logits[k] = ones - zeros;
  }
  return SoftWord::from_logits(logits);
}

BitWord map_bits(const SoftWord& q) {
  std::vector<std::uint8_t> bits(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) bits[i] = q.prob(i) > 0.5 ? 1 : 0;
  return BitWord(std::move(bits));
}

std::size_t hamming_distance(const BitWord& a, const BitWord& b) {
  check_len(b.size(), a.size(), "hamming_distance");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

DecodedWord min_distance_decode(const Codebook& book, const BitWord& received) {
  check_len(received.size(), book.word_len(), "min_distance_decode");
  std::size_t best = 0;
  std::size_t best_d = hamming_distance(book[0], received);
  for (std::size_t i = 1; i < book.size() && best_d > 0; ++i) {
    const std::size_t d = hamming_distance(book[i], received);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return {best, book[best], best_d};
}

BitWord xor_combine(const BitWord& m1, const BitWord& m2) {
  check_len(m2.size(), m1.size(), "xor_combine");
  std::vector<std::uint8_t> out(m1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m1[i] ^ m2[i];
  return BitWord(std::move(out));
}

SoftWord posterior_xor_residual(const SoftWord& q_m12, const SoftWord& q_m1) {
  check_len(q_m1.size(), q_m12.size(), "posterior_xor_residual");
  std::vector<double> out(q_m12.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = kernels::xor_prob(q_m12.prob(j), q_m1.prob(j));
  return SoftWord(out);
}

SoftWord posterior_xor_recombine(const SoftWord& q_m1, const SoftWord& q_m2) {
  check_len(q_m2.size(), q_m1.size(), "posterior_xor_recombine");
  std::vector<double> out(q_m1.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = kernels::xor_prob(q_m1.prob(j), q_m2.prob(j));
  return SoftWord(out);
}

// ---------------------------------------------------------------------------
// Codebooks

Codebook enumerate_codebook(const CodeSpec& code) {
  const std::size_t M = code.info_len();
  if (M > kMaxEnumerableBits) {
    throw CapacityError("enumerate_codebook: M=" + std::to_string(M) + " exceeds " +
                        std::to_string(kMaxEnumerableBits));
  }
  std::vector<BitWord> words;
  words.reserve(std::size_t{1} << M);
  for (std::uint64_t i = 0; i < (std::uint64_t{1} << M); ++i) {
    words.push_back(hard_encode(code, BitWord::from_index(i, M)));
  }
  return Codebook(std::move(words), M);
}

Codebook random_codebook(std::size_t info_len, std::size_t code_len, std::uint64_t seed) {
  if (info_len == 0 || code_len == 0) throw DomainError("random_codebook: lengths must be positive");
  if (info_len > kMaxEnumerableBits) throw CapacityError("random_codebook: M exceeds enumeration cap");
  if (info_len > code_len) {
    throw DomainError("random_codebook: cannot draw 2^" + std::to_string(info_len) + " distinct words of length " +
                      std::to_string(code_len));
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  const std::size_t n = std::size_t{1} << info_len;
  std::set<std::vector<std::uint8_t>> seen;
  std::vector<BitWord> words;
  words.reserve(n);
  while (words.size() < n) {
    std::vector<std::uint8_t> bits(code_len);
    for (auto& b : bits) b = coin(rng) ? 1 : 0;
    if (seen.insert(bits).second) words.emplace_back(std::move(bits));
  }
  return Codebook(std::move(words), info_len);
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

void soft_encode(const CodeSpec& code, std::span<const double> q_m, std::span<double> q_c) {
  check_len(q_m.size(), code.info_len(), "soft_encode");
  check_len(q_c.size(), code.code_len(), "soft_encode");
  for (std::size_t j = 0; j < q_c.size(); ++j) q_c[j] = q_m[code.parent(j)];
}

void soft_encode_vjp(const CodeSpec& code, std::span<const double> g_c, std::span<double> g_m) {
  check_len(g_c.size(), code.code_len(), "soft_encode_vjp");
  check_len(g_m.size(), code.info_len(), "soft_encode_vjp");
  std::fill(g_m.begin(), g_m.end(), 0.0);
  for (std::size_t j = 0; j < g_c.size(); ++j) g_m[code.parent(j)] += g_c[j];
}

void soft_decode(const CodeSpec& code, std::span<const double> q_c, std::span<double> q_m) {
  check_len(q_c.size(), code.code_len(), "soft_decode");
  check_len(q_m.size(), code.info_len(), "soft_decode");
  const std::size_t L = code.repeat();
  if (L == 1) {
    // A normalized product over a single copy is the copy itself.
    for (std::size_t k = 0; k < q_m.size(); ++k) q_m[k] = clamp_prob(q_c[k]);
    return;
  }
  for (std::size_t k = 0; k < q_m.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = k * L; j < (k + 1) * L; ++j) s += std::log(q_c[j]) - std::log1p(-q_c[j]);
    q_m[k] = clamp_prob(detail::sigmoid(s));
  }
}

void soft_decode_vjp(const CodeSpec& code, std::span<const double> q_c, std::span<const double> q_m,
                     std::span<const double> g_m, std::span<double> g_c) {
  check_len(q_c.size(), code.code_len(), "soft_decode_vjp");
  check_len(g_c.size(), code.code_len(), "soft_decode_vjp");
  check_len(q_m.size(), code.info_len(), "soft_decode_vjp");
  check_len(g_m.size(), code.info_len(), "soft_decode_vjp");
  const std::size_t L = code.repeat();
  for (std::size_t j = 0; j < q_c.size(); ++j) {
    const std::size_t k = code.parent(j);
    if (clamp_active(q_m[k])) {
      g_c[j] = 0.0;
    } else if (L == 1) {
      g_c[j] = g_m[k];
    } else {
      // d sigma(sum_i logit q_i) / d q_j = q_m (1 - q_m) / (q_j (1 - q_j))
      g_c[j] = g_m[k] * q_m[k] * (1.0 - q_m[k]) / (q_c[j] * (1.0 - q_c[j]));
    }
  }
}

double xor_prob(double a, double b) noexcept { return a * (1.0 - b) + (1.0 - a) * b; }

}  // namespace kernels

}  // namespace cdvae
