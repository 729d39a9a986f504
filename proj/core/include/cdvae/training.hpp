#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cdvae/data_io.hpp"
#include "cdvae/models.hpp"

namespace cdvae {

enum class Objective { kElbo, kIwae };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double beta = kDefaultBeta;
  std::uint64_t seed = 1;

  ModelKind kind = ModelKind::kCoded;
  std::size_t info_bits = 5;  // M (per branch for the hierarchical model)
  std::size_t repeat = 1;     // L, branch 1
  std::size_t repeat2 = 1;    // L, branch 2 (hierarchical only)
  double prior_nu = 0.5;
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<std::size_t> decoder_hidden{64};

  Objective objective = Objective::kElbo;
  std::size_t iwae_k = 1;
  /// Epochs without held-out improvement before stopping; 0 disables.
  std::size_t patience = 0;

  void validate() const;
};

/// Fresh model described by `cfg`, initialized from the seed's init stream.
Model make_model(const TrainConfig& cfg, std::size_t data_dim);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// One Adam descent step on `params` along the loss gradient `grads`.
/// Non-finite gradients leave params and state untouched and throw.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

struct RunRow {
  std::size_t epoch = 0;
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double kl2 = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<RunRow> rows;
  bool stopped_early = false;

  static constexpr const char* kHeader = "epoch,elbo,recon,kl,kl2,grad_norm,seconds";
  /// CSV text; `with_time` false writes 0 for the seconds column.
  std::string to_csv(bool with_time = true) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Generic loop over every model kind. `heldout` enables early stopping.
RunLog train(Model& model, const Dataset& data, const TrainConfig& cfg, const Dataset* heldout = nullptr);

RunLog train_uncoded(UncodedDVAE& model, const Dataset& data, const TrainConfig& cfg);
RunLog train_coded(CodedDVAE& model, const Dataset& data, const TrainConfig& cfg);
RunLog train_hier(HierCodedDVAE& model, const Dataset& data, const TrainConfig& cfg);

/// Mean single-sample ELBO over a dataset with noise from `seed`.
ElboParts mean_elbo(const Model& model, const Batch& x, std::uint64_t seed, std::size_t batch_size = 256);

/// Noise rows of width `width` in (0, 1) consumed row-major from `rng`.
Batch draw_noise(Eigen::Index rows, Eigen::Index width, Rng& rng);

}  // namespace cdvae
