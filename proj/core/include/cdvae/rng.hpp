#pragma once

#include <cstdint>
#include <random>

namespace cdvae {

/// Seeded generator with recorded provenance. All randomness in the library
/// flows through an explicit Rng; there is no global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  /// Uniform draw on [0, 1).
  double uniform() {
    ++draws_;
    return unit_(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t n) {
    ++draws_;
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }
  std::mt19937_64& engine() noexcept { return engine_; }

  /// Independent child stream, e.g. one per trial or per epoch.
  Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL))); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace cdvae
