#include "cdvae/diffcore.hpp"

#include <algorithm>
#include <cmath>

#include "cdvae/errors.hpp"

namespace cdvae {

namespace {

void apply_activation(Activation a, const Batch& pre, Batch& out) {
  switch (a) {
    case Activation::kIdentity:
      out = pre;
      break;
    case Activation::kLeakyRelu:
      out = pre.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
      break;
    case Activation::kLogistic:
      out = pre.unaryExpr([](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
      break;
  }
}

// seed * activation'(pre), written into seed.
void chain_activation(Activation a, const Batch& pre, Batch& seed) {
  switch (a) {
    case Activation::kIdentity:
      break;
    case Activation::kLeakyRelu:
      seed.array() *= pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }).array();
      break;
    case Activation::kLogistic:
      seed.array() *= pre.unaryExpr([](double v) {
                           const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                           return s * (1.0 - s);
                         }).array();
      break;
  }
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kLeakyRelu:
      return "leaky_relu";
    case Activation::kLogistic:
      return "logistic";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "logistic") return Activation::kLogistic;
  throw ConfigError("unknown activation '" + name + "'");
}

void NetworkPlan::validate() const {
  if (sizes.size() < 2) throw ShapeError("NetworkPlan: need at least input and output sizes");
  for (auto s : sizes) {
    if (s == 0) throw ShapeError("NetworkPlan: zero-width layer");
  }
}

// ---------------------------------------------------------------------------
// ParamStore

ParamStore ParamStore::zeros(const NetworkPlan& plan) {
  plan.validate();
  ParamStore ps;
  for (std::size_t l = 0; l < plan.num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(plan.sizes[l]);
    const auto out = static_cast<Eigen::Index>(plan.sizes[l + 1]);
    ps.layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
  return ps;
}

ParamStore ParamStore::glorot(const NetworkPlan& plan, Rng& rng) {
  ParamStore ps = zeros(plan);
  for (std::size_t l = 0; l < ps.layers_.size(); ++l) {
    auto& w = ps.layers_[l].weight;
    const double limit = std::sqrt(6.0 / static_cast<double>(plan.sizes[l] + plan.sizes[l + 1]));
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
  }
  return ps;
}

std::size_t ParamStore::size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::span<double>> ParamStore::arrays() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> ParamStore::arrays() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::string> ParamStore::array_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    names.push_back("layer" + std::to_string(l) + ".weight");
    names.push_back("layer" + std::to_string(l) + ".bias");
  }
  return names;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (auto a : arrays()) flat.insert(flat.end(), a.begin(), a.end());
  return flat;
}

void ParamStore::assign(std::span<const double> flat) {
  require_same_length(flat.size(), size(), "ParamStore::assign");
  std::size_t off = 0;
  for (auto a : arrays()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), a.size(), a.begin());
    off += a.size();
  }
}

bool ParamStore::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

bool ParamStore::same_shape(const ParamStore& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

void ParamStore::set_zero() {
  for (auto& l : layers_) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void ParamStore::add(const ParamStore& other) {
  if (!same_shape(other)) throw ShapeError("ParamStore::add: shape mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight += other.layers_[l].weight;
    layers_[l].bias += other.layers_[l].bias;
  }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardResult forward_mlp(const NetworkPlan& plan, const ParamStore& params, const Batch& input) {
  if (static_cast<std::size_t>(input.cols()) != plan.input_dim()) {
    throw ShapeError("forward_mlp: input width " + std::to_string(input.cols()) + " != plan input " +
                     std::to_string(plan.input_dim()));
  }
  if (params.layers().size() != plan.num_layers()) throw ShapeError("forward_mlp: params do not match plan");

  ForwardResult r;
  r.tape.plan_ = &plan;
  r.tape.params_ = &params;
  Batch x = input;
  for (std::size_t l = 0; l < plan.num_layers(); ++l) {
    const auto& layer = params.layers()[l];
    if (static_cast<std::size_t>(layer.weight.cols()) != plan.sizes[l] ||
        static_cast<std::size_t>(layer.weight.rows()) != plan.sizes[l + 1]) {
      throw ShapeError("forward_mlp: layer " + std::to_string(l) + " has wrong shape");
    }
    Batch pre = x * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (!pre.allFinite()) throw NumericError("forward_mlp: non-finite value in layer " + std::to_string(l));
    const Activation act = l + 1 == plan.num_layers() ? plan.output : plan.hidden;
    Batch out;
    apply_activation(act, pre, out);
    r.tape.inputs_.push_back(std::move(x));
    r.tape.preacts_.push_back(std::move(pre));
    x = std::move(out);
  }
  r.output = std::move(x);
  return r;
}

BackwardResult backward(GradTape& tape, const Batch& seed) {
  if (tape.consumed_) throw StateError("backward: tape already consumed");
  if (tape.plan_ == nullptr) throw StateError("backward: empty tape");
  tape.consumed_ = true;

  const NetworkPlan& plan = *tape.plan_;
  const ParamStore& params = *tape.params_;
  const std::size_t n = plan.num_layers();
  if (seed.rows() != tape.preacts_.back().rows() || seed.cols() != tape.preacts_.back().cols()) {
    throw ShapeError("backward: seed shape does not match network output");
  }

  BackwardResult r{ParamStore::zeros(plan), Batch()};
  Batch g = seed;
  for (std::size_t li = n; li-- > 0;) {
    chain_activation(li + 1 == n ? plan.output : plan.hidden, tape.preacts_[li], g);
    auto& out = r.grads.layers()[li];
    out.weight.noalias() = g.transpose() * tape.inputs_[li];
    out.bias = g.colwise().sum().transpose();
    Batch gx = g * params.layers()[li].weight;
    g = std::move(gx);
  }
  if (!r.grads.all_finite() || !g.allFinite()) throw NumericError("backward: non-finite gradient");
  r.input_grad = std::move(g);
  return r;
}

FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params, std::span<const double> analytic, double h,
                                   double tol) {
  require_same_length(analytic.size(), params.size(), "finite_diff_check");
  FiniteDiffReport rep;
  rep.rel_error.resize(params.size());
  rep.numeric.resize(params.size());
  std::vector<double> work(params.begin(), params.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = work[i];
    work[i] = saved + h;
    const double up = loss(work);
    work[i] = saved - h;
    const double down = loss(work);
    work[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1e-12, std::abs(analytic[i]) + std::abs(fd));
    rep.numeric[i] = fd;
    rep.rel_error[i] = err;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace cdvae
