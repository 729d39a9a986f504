#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/rng.hpp"

namespace cdvae {

inline constexpr double kDefaultBeta = 15.0;
/// Uniform noise is kept inside (kNoiseClip, 1 - kNoiseClip).
inline constexpr double kNoiseClip = 1e-12;

/// Truncated-exponential smoothing on [0, 1]:
///   p(z | 1) = exp(beta (z - 1)) / Z,   p(z | 0) = exp(-beta z) / Z,
/// with Z = (1 - exp(-beta)) / beta.
class SmoothingParams {
 public:
  explicit SmoothingParams(double beta = kDefaultBeta);

  double beta() const noexcept { return beta_; }
  double z_norm() const noexcept { return z_norm_; }
  double exp_neg_beta() const noexcept { return exp_neg_beta_; }
  /// 1 - exp(-beta), evaluated without cancellation.
  double mass() const noexcept { return mass_; }

 private:
  double beta_;
  double exp_neg_beta_;
  double mass_;
  double z_norm_;
};

/// Uniform draws feeding the inverse CDFs, with the stream they came from.
struct NoiseDraw {
  std::vector<double> rho;
  std::uint64_t seed = 0;
  std::uint64_t offset = 0;  // generator draws consumed before this one

  /// Explicit values; each must lie in (0, 1) and is clipped to the noise band.
  static NoiseDraw from_values(std::vector<double> rho);
  static NoiseDraw draw(std::size_t n, Rng& rng);

  std::size_t size() const noexcept { return rho.size(); }
};

double conditional_pdf(double z, int bit, const SmoothingParams& p);
double conditional_cdf(double z, int bit, const SmoothingParams& p);
double conditional_inverse_cdf(int bit, double rho, const SmoothingParams& p);

/// Density of the marginal (1 - q) p(z|0) + q p(z|1).
double mixture_pdf(double q, double z, const SmoothingParams& p);
double mixture_cdf(double q, double z, const SmoothingParams& p);
/// Closed-form inverse of mixture_cdf in z.
double mixture_inverse_cdf(double q, double rho, const SmoothingParams& p);

struct InverseCdfGrad {
  double z;
  double dz_dq;
  double dz_drho;
};

/// mixture_inverse_cdf together with its partial derivatives, obtained from
/// the implicit relation mixture_cdf(q, z) = rho.
InverseCdfGrad mixture_inverse_cdf_grad(double q, double rho, const SmoothingParams& p);

/// Relaxed latents and the pathwise sensitivities dz_j / dq_j.
struct SmoothedSample {
  std::vector<double> z;
  std::vector<double> dz_dq;
};

SmoothedSample sample_smoothed(const SoftWord& q_c, const NoiseDraw& noise, const SmoothingParams& p);

namespace kernels {
void sample_smoothed(std::span<const double> q, std::span<const double> rho, const SmoothingParams& p,
                     std::span<double> z, std::span<double> dz_dq);
}

}  // namespace cdvae
