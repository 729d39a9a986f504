#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdvae/rng.hpp"

namespace cdvae {

/// Row-major batch: one item per row.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { kIdentity, kLeakyRelu, kLogistic };

inline constexpr double kLeakySlope = 0.01;

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Layer widths [in, h1, ..., out] with one activation shared by hidden layers.
struct NetworkPlan {
  std::vector<std::size_t> sizes;
  Activation hidden = Activation::kLeakyRelu;
  Activation output = Activation::kIdentity;

  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }
  std::size_t num_layers() const { return sizes.size() - 1; }
  void validate() const;

  friend bool operator==(const NetworkPlan&, const NetworkPlan&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Weights and biases of one network. Arrays are exposed both by layer and as
/// a flat sequence of contiguous spans for optimizers and gradient checks.
class ParamStore {
 public:
  ParamStore() = default;
  static ParamStore zeros(const NetworkPlan& plan);
  /// Uniform in +-sqrt(6 / (fan_in + fan_out)); zero biases.
  static ParamStore glorot(const NetworkPlan& plan, Rng& rng);

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  std::size_t size() const;
  std::vector<std::span<double>> arrays();
  std::vector<std::span<const double>> arrays() const;
  /// "layer<i>.weight" / "layer<i>.bias", in arrays() order.
  std::vector<std::string> array_names() const;

  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  bool all_finite() const;
  bool same_shape(const ParamStore& other) const;
  void set_zero();
  void add(const ParamStore& other);

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<DenseLayer> layers_;
};

struct ForwardResult;
struct BackwardResult;

/// Forward record needed for one reverse sweep. Consumed by backward().
class GradTape {
 public:
  bool consumed() const noexcept { return consumed_; }

 private:
  friend ForwardResult forward_mlp(const NetworkPlan&, const ParamStore&, const Batch&);
  friend BackwardResult backward(GradTape&, const Batch&);

  const NetworkPlan* plan_ = nullptr;
  const ParamStore* params_ = nullptr;
  std::vector<Batch> inputs_;       // input to each layer
  std::vector<Batch> preacts_;      // affine output of each layer
  bool consumed_ = false;
};

struct ForwardResult {
  Batch output;
  GradTape tape;
};

struct BackwardResult {
  ParamStore grads;
  Batch input_grad;
};

/// Evaluates the network on a batch. The plan and params must outlive the tape.
ForwardResult forward_mlp(const NetworkPlan& plan, const ParamStore& params, const Batch& input);

/// Reverse sweep given d(loss)/d(output); throws StateError if the tape was
/// already consumed.
BackwardResult backward(GradTape& tape, const Batch& seed);

struct FiniteDiffReport {
  std::vector<double> rel_error;
  std::vector<double> numeric;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = false;
};

/// Central differences of `loss` at `params`, compared coordinate-wise against
/// `analytic` using |a - n| / max(1e-12, |a| + |n|).
FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params, std::span<const double> analytic, double h,
                                   double tol);

}  // namespace cdvae
