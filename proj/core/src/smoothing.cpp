#include "cdvae/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdvae/errors.hpp"

namespace cdvae {

namespace {

void check_unit(double z, const char* what) {
  if (!(z >= 0.0 && z <= 1.0)) throw DomainError(std::string(what) + ": z outside [0,1]");
}

void check_open_unit(double rho, const char* what) {
  if (!(rho > 0.0 && rho < 1.0)) throw DomainError(std::string(what) + ": rho outside (0,1)");
}

void check_bit(int bit) {
  if (bit != 0 && bit != 1) throw DomainError("smoothing: bit must be 0 or 1");
}

double clip_unit(double z) { return std::clamp(z, 0.0, 1.0); }

// F(z|0) and F(z|1) on [0,1]; no domain checks.
double cdf0(double z, const SmoothingParams& p) { return -std::expm1(-p.beta() * z) / p.mass(); }
double cdf1(double z, const SmoothingParams& p) { return p.exp_neg_beta() * std::expm1(p.beta() * z) / p.mass(); }
double pdf0(double z, const SmoothingParams& p) { return std::exp(-p.beta() * z) / p.z_norm(); }
double pdf1(double z, const SmoothingParams& p) { return std::exp(p.beta() * (z - 1.0)) / p.z_norm(); }

double inverse_unchecked(double q, double rho, const SmoothingParams& p) {
  const double e = p.exp_neg_beta();
  const double b = (rho + e * (q - rho)) / (1.0 - q) - 1.0;
  const double c = -q * e / (1.0 - q);
  const double disc = b * b - 4.0 * c;
  if (disc < 0.0) throw NumericError("mixture_inverse_cdf: negative discriminant");
  const double root = std::sqrt(disc);
  // u = exp(-beta z) is the positive root of u^2 + b u + c = 0.
  const double u = b > 0.0 ? -2.0 * c / (b + root) : 0.5 * (root - b);
  return clip_unit(-std::log(u) / p.beta());
}

}  // namespace

SmoothingParams::SmoothingParams(double beta) : beta_(beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("SmoothingParams: beta must be positive");
  exp_neg_beta_ = std::exp(-beta);
  mass_ = -std::expm1(-beta);
  z_norm_ = mass_ / beta;
}

NoiseDraw NoiseDraw::from_values(std::vector<double> rho) {
  for (auto& r : rho) {
    check_open_unit(r, "NoiseDraw");
    r = std::clamp(r, kNoiseClip, 1.0 - kNoiseClip);
  }
  return NoiseDraw{std::move(rho), 0, 0};
}

NoiseDraw NoiseDraw::draw(std::size_t n, Rng& rng) {
  NoiseDraw d{std::vector<double>(n), rng.seed(), rng.draws()};
  for (auto& r : d.rho) r = std::clamp(rng.uniform(), kNoiseClip, 1.0 - kNoiseClip);
  return d;
}

double conditional_pdf(double z, int bit, const SmoothingParams& p) {
  check_unit(z, "conditional_pdf");
  check_bit(bit);
  return bit == 1 ? pdf1(z, p) : pdf0(z, p);
}

double conditional_cdf(double z, int bit, const SmoothingParams& p) {
  check_unit(z, "conditional_cdf");
  check_bit(bit);
  return bit == 1 ? cdf1(z, p) : cdf0(z, p);
}

double conditional_inverse_cdf(int bit, double rho, const SmoothingParams& p) {
  check_bit(bit);
  check_open_unit(rho, "conditional_inverse_cdf");
  if (bit == 0) return clip_unit(-std::log1p(-rho * p.mass()) / p.beta());
  return clip_unit(std::log(rho * p.mass() + p.exp_neg_beta()) / p.beta() + 1.0);
}

double mixture_pdf(double q, double z, const SmoothingParams& p) {
  check_unit(z, "mixture_pdf");
  return (1.0 - q) * pdf0(z, p) + q * pdf1(z, p);
}

double mixture_cdf(double q, double z, const SmoothingParams& p) {
  check_unit(z, "mixture_cdf");
  return (1.0 - q) * cdf0(z, p) + q * cdf1(z, p);
}

double mixture_inverse_cdf(double q, double rho, const SmoothingParams& p) {
  if (!(q >= kProbClamp && q <= 1.0 - kProbClamp)) throw DomainError("mixture_inverse_cdf: q outside clamp band");
  check_open_unit(rho, "mixture_inverse_cdf");
  return inverse_unchecked(q, rho, p);
}

InverseCdfGrad mixture_inverse_cdf_grad(double q, double rho, const SmoothingParams& p) {
  const double z = mixture_inverse_cdf(q, rho, p);
  const double f = (1.0 - q) * pdf0(z, p) + q * pdf1(z, p);
  return {z, -(cdf1(z, p) - cdf0(z, p)) / f, 1.0 / f};
}

SmoothedSample sample_smoothed(const SoftWord& q_c, const NoiseDraw& noise, const SmoothingParams& p) {
  require_same_length(noise.size(), q_c.size(), "sample_smoothed");
  SmoothedSample s{std::vector<double>(q_c.size()), std::vector<double>(q_c.size())};
  kernels::sample_smoothed(q_c.probs(), noise.rho, p, s.z, s.dz_dq);
  return s;
}

namespace kernels {

void sample_smoothed(std::span<const double> q, std::span<const double> rho, const SmoothingParams& p,
                     std::span<double> z, std::span<double> dz_dq) {
  require_same_length(rho.size(), q.size(), "sample_smoothed");
  require_same_length(z.size(), q.size(), "sample_smoothed");
  require_same_length(dz_dq.size(), q.size(), "sample_smoothed");
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double zj = inverse_unchecked(q[j], rho[j], p);
    const double f = (1.0 - q[j]) * pdf0(zj, p) + q[j] * pdf1(zj, p);
    z[j] = zj;
    dz_dq[j] = -(cdf1(zj, p) - cdf0(zj, p)) / f;
  }
}

}  // namespace kernels

}  // namespace cdvae
