#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cdvae {

/// Lower clamp applied to every bit probability; the upper clamp is 1 - kProbClamp.
inline constexpr double kProbClamp = 1e-7;

/// Largest information length for which codebooks are materialized (4096 words).
inline constexpr std::size_t kMaxEnumerableBits = 12;

double clamp_prob(double p) noexcept;

/// Hard bit vector. Elements are 0 or 1 and the word is never empty.
class BitWord {
 public:
  explicit BitWord(std::vector<std::uint8_t> bits);
  static BitWord zeros(std::size_t n);
  /// Bits of `index` with the most significant bit first, `n` bits wide.
  static BitWord from_index(std::uint64_t index, std::size_t n);

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::uint64_t to_index() const;
  std::vector<double> as_probs() const;

  friend bool operator==(const BitWord&, const BitWord&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Per-bit Bernoulli probabilities q(bit = 1), kept alongside their log pair
/// (log q, log(1 - q)). Every entry is clamped to [kProbClamp, 1 - kProbClamp].
class SoftWord {
 public:
  explicit SoftWord(std::span<const double> probs);
  SoftWord(std::initializer_list<double> probs);
  /// Builds from log-odds without leaving the log domain before clamping.
  static SoftWord from_logits(std::span<const double> logits);
  static SoftWord constant(std::size_t n, double p);
  static SoftWord from_bits(const BitWord& w);

  std::size_t size() const noexcept { return probs_.size(); }
  double prob(std::size_t i) const { return probs_[i]; }
  double log_p1(std::size_t i) const { return log_p1_[i]; }
  double log_p0(std::size_t i) const { return log_p0_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

 private:
  SoftWord() = default;
  void set(std::size_t i, double log_p1, double log_p0);

  std::vector<double> probs_;
  std::vector<double> log_p1_;
  std::vector<double> log_p0_;
};

/// (M, L) repetition code: each of the M information bits is repeated L times,
/// giving D = M * L coded bits. Bit k occupies coded positions [k*L, (k+1)*L).
class CodeSpec {
 public:
  CodeSpec(std::size_t info_len, std::size_t repeat);

  std::size_t info_len() const noexcept { return info_len_; }
  std::size_t repeat() const noexcept { return repeat_; }
  std::size_t code_len() const noexcept { return info_len_ * repeat_; }
  double rate() const noexcept { return 1.0 / static_cast<double>(repeat_); }
  /// Information bit feeding coded position j.
  std::size_t parent(std::size_t j) const noexcept { return j / repeat_; }

  friend bool operator==(const CodeSpec&, const CodeSpec&) = default;

 private:
  std::size_t info_len_;
  std::size_t repeat_;
};

/// Explicit table of distinct codewords of a common length.
class Codebook {
 public:
  Codebook(std::vector<BitWord> words, std::size_t index_len);

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t word_len() const noexcept { return words_.front().size(); }
  std::size_t index_len() const noexcept { return index_len_; }
  const BitWord& operator[](std::size_t i) const { return words_[i]; }
  const std::vector<BitWord>& words() const noexcept { return words_; }

 private:
  std::vector<BitWord> words_;
  std::size_t index_len_;
};

struct DecodedWord {
  std::size_t index;
  BitWord word;
  std::size_t distance;
};

BitWord hard_encode(const CodeSpec& code, const BitWord& m);
SoftWord soft_encode(const CodeSpec& code, const SoftWord& q_m);
/// Normalized all-ones / all-zeros product over the copies of each bit, in log domain.
SoftWord soft_decode(const CodeSpec& code, const SoftWord& q_c);
/// Bit k is 1 iff q_k > 0.5; an exact tie decodes to 0.
BitWord map_bits(const SoftWord& q);
DecodedWord min_distance_decode(const Codebook& book, const BitWord& received);
std::size_t hamming_distance(const BitWord& a, const BitWord& b);

BitWord xor_combine(const BitWord& m1, const BitWord& m2);
/// q(m2 = 1) from q(m1 xor m2 = 1) and q(m1 = 1), treating the two as independent.
SoftWord posterior_xor_residual(const SoftWord& q_m12, const SoftWord& q_m1);
/// q(m1 xor m2 = 1) from independent q(m1 = 1) and q(m2 = 1).
SoftWord posterior_xor_recombine(const SoftWord& q_m1, const SoftWord& q_m2);

Codebook enumerate_codebook(const CodeSpec& code);
Codebook random_codebook(std::size_t info_len, std::size_t code_len, std::uint64_t seed);

// Span kernels used on the training hot path. Inputs are assumed clamped;
// outputs are clamped. Each *_vjp accumulates nothing: it overwrites its output.
namespace kernels {

void soft_encode(const CodeSpec& code, std::span<const double> q_m, std::span<double> q_c);
void soft_encode_vjp(const CodeSpec& code, std::span<const double> g_c, std::span<double> g_m);
void soft_decode(const CodeSpec& code, std::span<const double> q_c, std::span<double> q_m);
/// Pullback of soft_decode; zero gradient where the output clamp is active.
void soft_decode_vjp(const CodeSpec& code, std::span<const double> q_c, std::span<const double> q_m,
                     std::span<const double> g_m, std::span<double> g_c);

/// XOR convolution r = a(1-b) + (1-a)b of two independent bit probabilities.
double xor_prob(double a, double b) noexcept;

}  // namespace kernels

}  // namespace cdvae
