#pragma once

// Dense ELU networks with the derivatives the generating-function loss needs:
//  * forward pass and plain reverse accumulation,
//  * the input gradient of a scalar-output network,
//  * the adjoint of that input-gradient computation, which yields parameter gradients
//    of losses built from input gradients (mixed second derivatives).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgfnn::nn {

inline double elu(double a, double alpha = 1.0) { return a > 0.0 ? a : alpha * std::expm1(a); }
inline double elu_d1(double a, double alpha = 1.0) { return a > 0.0 ? 1.0 : alpha * std::exp(a); }
inline double elu_d2(double a, double alpha = 1.0) { return a > 0.0 ? 0.0 : alpha * std::exp(a); }

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Flat parameter storage. Layer l (0-based) holds W_l (column-major, out x in) then b_l.
/// Hidden layers apply ELU; the last layer is affine.
struct MlpParams {
  std::vector<int> layer_sizes;
  double elu_alpha = 1.0;
  std::vector<double> values;

  MlpParams() = default;
  explicit MlpParams(std::vector<int> sizes, double alpha = 1.0)
      : layer_sizes(std::move(sizes)), elu_alpha(alpha), values(parameter_count(layer_sizes), 0.0) {
    offsets_ = compute_offsets(layer_sizes);
  }

  static std::size_t parameter_count(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("MLP needs at least input and output sizes");
    std::size_t n = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
      if (sizes[l - 1] < 1 || sizes[l] < 1) throw std::invalid_argument("MLP layer sizes must be >= 1");
      n += static_cast<std::size_t>(sizes[l]) * (sizes[l - 1] + 1);
    }
    return n;
  }

  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  std::size_t size() const { return values.size(); }

  std::size_t weight_offset(int l) const { return offsets_[l]; }
  std::size_t bias_offset(int l) const {
    return offsets_[l] + static_cast<std::size_t>(layer_sizes[l + 1]) * layer_sizes[l];
  }

  MatrixMap weight(int l) { return {values.data() + weight_offset(l), layer_sizes[l + 1], layer_sizes[l]}; }
  ConstMatrixMap weight(int l) const {
    return {values.data() + weight_offset(l), layer_sizes[l + 1], layer_sizes[l]};
  }
  VectorMap bias(int l) { return {values.data() + bias_offset(l), layer_sizes[l + 1]}; }
  ConstVectorMap bias(int l) const { return {values.data() + bias_offset(l), layer_sizes[l + 1]}; }

  /// Must be called after layer_sizes/values are assigned directly (e.g. when loading).
  void rebuild_layout() {
    if (values.size() != parameter_count(layer_sizes))
      throw std::invalid_argument("MLP parameter count does not match layer sizes");
    offsets_ = compute_offsets(layer_sizes);
  }

  bool operator==(const MlpParams& o) const {
    return layer_sizes == o.layer_sizes && elu_alpha == o.elu_alpha && values == o.values;
  }

 private:
  static std::vector<std::size_t> compute_offsets(const std::vector<int>& sizes) {
    std::vector<std::size_t> off;
    std::size_t n = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
      off.push_back(n);
      n += static_cast<std::size_t>(sizes[l]) * (sizes[l - 1] + 1);
    }
    return off;
  }
  std::vector<std::size_t> offsets_;
};

inline std::vector<int> mlp_shape(int input, const std::vector<int>& hidden, int output) {
  std::vector<int> s{input};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(output);
  return s;
}

/// Glorot-uniform weights, zero biases.
inline MlpParams make_mlp(std::vector<int> sizes, std::uint64_t seed, double alpha = 1.0) {
  MlpParams params(std::move(sizes), alpha);
  std::mt19937_64 engine(seed);
  for (int l = 0; l < params.num_layers(); ++l) {
    const double fan_in = params.layer_sizes[l], fan_out = params.layer_sizes[l + 1];
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto W = params.weight(l);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = limit * dist(engine);
  }
  return params;
}

/// Per-evaluation buffers. One workspace per thread; sized lazily on first use.
struct MlpWorkspace {
  std::vector<Eigen::VectorXd> pre;    // a_l, l = 0..L-1
  std::vector<Eigen::VectorXd> act;    // h_0 = input, h_l = elu(a_l) for hidden layers
  std::vector<Eigen::VectorXd> delta;  // input-gradient chain: delta_l = dy/dh_l
  std::vector<Eigen::VectorXd> u;      // elu'(a_l) * delta_l
  std::vector<Eigen::VectorXd> pre_adj_2nd;
  std::vector<Eigen::VectorXd> delta_adj;
  Eigen::VectorXd output;
  Eigen::VectorXd input_grad;
  Eigen::VectorXd input_adj;
  std::vector<Eigen::VectorXd> pre_adj;  // dLoss/da_l
  std::vector<Eigen::VectorXd> act_adj;  // dLoss/dh_l
  std::vector<Eigen::VectorXd> u_adj;
  std::vector<int> shape;

  void prepare(const MlpParams& p) {
    const int L = p.num_layers();
    if (shape == p.layer_sizes) return;
    shape = p.layer_sizes;
    pre.assign(L, {});
    act.assign(L, {});
    delta.assign(L, {});
    u.assign(L, {});
    pre_adj_2nd.assign(L, {});
    delta_adj.assign(L, {});
    pre_adj.assign(L, {});
    act_adj.assign(L, {});
    u_adj.assign(L, {});
    for (int l = 0; l < L; ++l) {
      pre[l].resize(p.layer_sizes[l + 1]);
      act[l].resize(p.layer_sizes[l]);
      delta[l].resize(p.layer_sizes[l]);
      u[l].resize(p.layer_sizes[l + 1]);
      pre_adj_2nd[l].resize(p.layer_sizes[l + 1]);
      delta_adj[l].resize(p.layer_sizes[l]);
      pre_adj[l].resize(p.layer_sizes[l + 1]);
      act_adj[l].resize(p.layer_sizes[l]);
      u_adj[l].resize(p.layer_sizes[l + 1]);
    }
    output.resize(p.output_size());
    input_grad.resize(p.input_size());
    input_adj.resize(p.input_size());
  }
};

/// Forward pass; fills ws.pre/ws.act/ws.output.
inline const Eigen::VectorXd& forward(const MlpParams& p, const Eigen::Ref<const Eigen::VectorXd>& input,
                                      MlpWorkspace& ws) {
  if (input.size() != p.input_size())
    throw std::invalid_argument("MLP input has length " + std::to_string(input.size()) + ", expected " +
                                std::to_string(p.input_size()));
  ws.prepare(p);
  const int L = p.num_layers();
  ws.act[0] = input;
  for (int l = 0; l < L; ++l) {
    ws.pre[l].noalias() = p.weight(l) * ws.act[l];
    ws.pre[l] += p.bias(l);
    if (l + 1 < L) {
      for (Eigen::Index i = 0; i < ws.pre[l].size(); ++i) ws.act[l + 1][i] = elu(ws.pre[l][i], p.elu_alpha);
    }
  }
  ws.output = ws.pre[L - 1];
  return ws.output;
}

inline Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::Ref<const Eigen::VectorXd>& input) {
  MlpWorkspace ws;
  return forward(p, input, ws);
}

/// Reverse accumulation from output adjoint `out_adj` after forward(). Adds parameter
/// gradients into `grad` (may be empty to skip) and leaves d(loss)/d(input) in ws.input_adj.
inline void backward(const MlpParams& p, const Eigen::Ref<const Eigen::VectorXd>& out_adj, MlpWorkspace& ws,
                     std::span<double> grad) {
  const int L = p.num_layers();
  const bool want_grad = !grad.empty();
  ws.pre_adj[L - 1] = out_adj;
  for (int l = L - 1; l >= 0; --l) {
    if (want_grad) {
      MatrixMap(grad.data() + p.weight_offset(l), p.layer_sizes[l + 1], p.layer_sizes[l]).noalias() +=
          ws.pre_adj[l] * ws.act[l].transpose();
      VectorMap(grad.data() + p.bias_offset(l), p.layer_sizes[l + 1]) += ws.pre_adj[l];
    }
    ws.act_adj[l].noalias() = p.weight(l).transpose() * ws.pre_adj[l];
    if (l > 0) {
      for (Eigen::Index i = 0; i < ws.act_adj[l].size(); ++i)
        ws.pre_adj[l - 1][i] = elu_d1(ws.pre[l - 1][i], p.elu_alpha) * ws.act_adj[l][i];
    }
  }
  ws.input_adj = ws.act_adj[0];
}

/// Gradient of a scalar-output network w.r.t. its input, after forward().
/// Fills ws.delta/ws.u and returns ws.input_grad.
inline const Eigen::VectorXd& input_gradient(const MlpParams& p, MlpWorkspace& ws) {
  if (p.output_size() != 1) throw std::invalid_argument("input_gradient requires a scalar-output network");
  const int L = p.num_layers();
  ws.delta[L - 1] = p.weight(L - 1).row(0).transpose();
  for (int l = L - 1; l >= 1; --l) {
    for (Eigen::Index i = 0; i < ws.u[l - 1].size(); ++i)
      ws.u[l - 1][i] = elu_d1(ws.pre[l - 1][i], p.elu_alpha) * ws.delta[l][i];
    ws.delta[l - 1].noalias() = p.weight(l - 1).transpose() * ws.u[l - 1];
  }
  ws.input_grad = ws.delta[0];
  return ws.input_grad;
}

/// Adjoint of forward() + input_gradient() for a scalar-output network.
///
/// Given out_adj = dLoss/dy and grad_adj = dLoss/d(dy/dx), adds dLoss/dtheta into `grad`
/// and leaves dLoss/dx in ws.input_adj.
inline void input_gradient_backward(const MlpParams& p, double out_adj,
                                    const Eigen::Ref<const Eigen::VectorXd>& grad_adj, MlpWorkspace& ws,
                                    std::span<double> grad) {
  const int L = p.num_layers();
  const bool want_grad = !grad.empty();
  auto gW = [&](int l) {
    return MatrixMap(grad.data() + p.weight_offset(l), p.layer_sizes[l + 1], p.layer_sizes[l]);
  };

  // Reverse of the input-gradient chain, walked from the input side upwards.
  // delta_{l} = W_l^T u_l  with u_l = elu'(a_l) * delta_{l+1}  (0-based layer l).
  ws.delta_adj[0] = grad_adj;
  for (int l = 0; l + 1 < L; ++l) {
    if (want_grad) gW(l).noalias() += ws.u[l] * ws.delta_adj[l].transpose();
    ws.u_adj[l].noalias() = p.weight(l) * ws.delta_adj[l];
    for (Eigen::Index i = 0; i < ws.u_adj[l].size(); ++i) {
      const double a = ws.pre[l][i];
      ws.delta_adj[l + 1][i] = elu_d1(a, p.elu_alpha) * ws.u_adj[l][i];
      ws.pre_adj_2nd[l][i] = elu_d2(a, p.elu_alpha) * ws.delta[l + 1][i] * ws.u_adj[l][i];
    }
  }
  // delta_{L-1} = row of the output weight.
  if (want_grad) gW(L - 1).row(0) += ws.delta_adj[L - 1].transpose();

  // Ordinary reverse pass over the forward computation, injecting the second-order terms.
  ws.pre_adj[L - 1][0] = out_adj;
  for (int l = L - 1; l >= 0; --l) {
    if (want_grad) {
      gW(l).noalias() += ws.pre_adj[l] * ws.act[l].transpose();
      VectorMap(grad.data() + p.bias_offset(l), p.layer_sizes[l + 1]) += ws.pre_adj[l];
    }
    ws.act_adj[l].noalias() = p.weight(l).transpose() * ws.pre_adj[l];
    if (l > 0) {
      for (Eigen::Index i = 0; i < ws.act_adj[l].size(); ++i)
        ws.pre_adj[l - 1][i] =
            elu_d1(ws.pre[l - 1][i], p.elu_alpha) * ws.act_adj[l][i] + ws.pre_adj_2nd[l - 1][i];
    }
  }
  ws.input_adj = ws.act_adj[0];
}

/// Output x input Jacobian by reverse accumulation, one output row at a time.
inline Eigen::MatrixXd mlp_input_gradient(const MlpParams& p, const Eigen::Ref<const Eigen::VectorXd>& input) {
  MlpWorkspace ws;
  forward(p, input, ws);
  Eigen::MatrixXd J(p.output_size(), p.input_size());
  Eigen::VectorXd e = Eigen::VectorXd::Zero(p.output_size());
  for (int k = 0; k < p.output_size(); ++k) {
    e.setZero();
    e[k] = 1.0;
    backward(p, e, ws, {});
    J.row(k) = ws.input_adj.transpose();
  }
  return J;
}

// ---------------------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
      throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
};

/// One bias-corrected Adam update over parameter blocks laid out consecutively in `grads`.
inline void adam_step(AdamState& state, std::initializer_list<std::span<double>> blocks,
                      std::span<const double> grads) {
  std::size_t total = 0;
  for (auto b : blocks) total += b.size();
  if (total != grads.size() || total != state.first_moment.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state sizes differ");
  const auto& c = state.config;
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
  std::size_t i = 0;
  for (auto block : blocks) {
    for (double& theta : block) {
      const double g = grads[i];
      double& m = state.first_moment[i];
      double& v = state.second_moment[i];
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g * g;
      theta -= c.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
      ++i;
    }
  }
}

// ---------------------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value is ~0 from
/// being judged on round-off alone.
inline double relative_error(double a, double n, double floor = 1e-7) {
  const double denom = std::max({std::abs(a), std::abs(n), floor});
  return std::abs(a - n) / denom;
}

/// Central differences of `loss(params)` against `analytic`. `params` is perturbed in place
/// and restored. The relative-error floor is max(floor, relative_floor * max|analytic|), so
/// entries many orders below the gradient's scale are compared at that scale.
template <class LossFn>
GradCheckReport finite_diff_check(std::span<double> params, std::span<const double> analytic, LossFn&& loss,
                                  double tolerance, double h = 1e-5, double floor = 1e-7,
                                  double relative_floor = 1e-4) {
  if (params.size() != analytic.size()) throw std::invalid_argument("finite_diff_check: size mismatch");
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  floor = std::max(floor, relative_floor * scale);
  GradCheckReport rep;
  rep.tolerance = tolerance;
  rep.analytic.assign(analytic.begin(), analytic.end());
  rep.numeric.resize(params.size());
  rep.rel_error.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    rep.numeric[i] = (up - down) / (2.0 * h);
    rep.rel_error[i] = relative_error(analytic[i], rep.numeric[i], floor);
    if (!(rep.rel_error[i] <= rep.max_rel_error)) {
      rep.max_rel_error = rep.rel_error[i];
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace sgfnn::nn
