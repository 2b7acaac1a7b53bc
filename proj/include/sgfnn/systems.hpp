#pragma once

// Benchmark stochastic Hamiltonian systems in Stratonovich form.
//
//   dp = f(p,q) dt + sum_k sigma_k(p,q) o dW_k
//   dq = g(p,q) dt + sum_k gamma_k(p,q) o dW_k
//
// with f = -dH0/dq, g = dH0/dp, sigma_k = -dHk/dq, gamma_k = dHk/dp.
// All derivatives below are closed form.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sgfnn {

enum class SystemKind { LinearOscillator, Kubo, NonSeparable, Synchrotron };

/// Phase-space point stored as x = (p, q), p and q each of length d.
struct PhaseState {
  Eigen::VectorXd x;

  PhaseState() = default;
  explicit PhaseState(Eigen::VectorXd v) : x(std::move(v)) {
    if (x.size() == 0 || x.size() % 2 != 0)
      throw std::invalid_argument("PhaseState: length must be 2d with d >= 1");
  }
  PhaseState(const Eigen::VectorXd& p, const Eigen::VectorXd& q) : x(p.size() + q.size()) {
    if (p.size() != q.size() || p.size() == 0)
      throw std::invalid_argument("PhaseState: p and q must have equal length d >= 1");
    x << p, q;
  }
  static PhaseState from_pq(double p, double q) { return PhaseState(Eigen::Vector2d(p, q)); }

  int dim() const { return static_cast<int>(x.size() / 2); }
  auto p() const { return x.head(dim()); }
  auto q() const { return x.tail(dim()); }
  bool finite() const { return x.allFinite(); }
};

struct SystemSpec {
  SystemKind kind = SystemKind::LinearOscillator;
  int d = 1;
  int r = 1;
  // Named constants in the system's declared order.
  std::vector<std::pair<std::string, double>> constants;

  double constant(std::string_view name) const {
    for (const auto& [k, v] : constants)
      if (k == name) return v;
    throw std::invalid_argument("SystemSpec: unknown constant '" + std::string(name) + "'");
  }
  double c(std::size_t i) const { return constants[i].second; }
};

inline std::string_view system_name(SystemKind kind) {
  switch (kind) {
    case SystemKind::LinearOscillator: return "linear";
    case SystemKind::Kubo: return "kubo";
    case SystemKind::NonSeparable: return "nonseparable";
    case SystemKind::Synchrotron: return "synchrotron";
  }
  return "unknown";
}

inline SystemKind parse_system_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  s.erase(std::remove_if(s.begin(), s.end(), [](char ch) { return ch == '_' || ch == '-'; }), s.end());
  if (s == "linear" || s == "linearoscillator") return SystemKind::LinearOscillator;
  if (s == "kubo" || s == "kubooscillator") return SystemKind::Kubo;
  if (s == "nonseparable") return SystemKind::NonSeparable;
  if (s == "synchrotron") return SystemKind::Synchrotron;
  throw std::invalid_argument("unknown system '" + std::string(name) + "'");
}

/// Declared parameter names and their defaults.
inline std::vector<std::pair<std::string, double>> default_constants(SystemKind kind) {
  switch (kind) {
    case SystemKind::LinearOscillator: return {{"sigma", 0.1}};
    case SystemKind::Kubo: return {{"a", 2.0}, {"sigma", 0.3}};
    case SystemKind::NonSeparable: return {};
    case SystemKind::Synchrotron: return {{"omega", 1.0}, {"sigma1", 0.2}, {"sigma2", 0.2}};
  }
  return {};
}

inline int noise_channels(SystemKind kind) { return kind == SystemKind::Synchrotron ? 2 : 1; }

/// Builds a spec from defaults, applying overrides. Unknown override names are rejected.
inline SystemSpec make_system(SystemKind kind, const std::map<std::string, double>& overrides = {}) {
  SystemSpec spec;
  spec.kind = kind;
  spec.d = 1;
  spec.r = noise_channels(kind);
  spec.constants = default_constants(kind);
  for (const auto& [name, value] : overrides) {
    auto it = std::find_if(spec.constants.begin(), spec.constants.end(),
                           [&](const auto& kv) { return kv.first == name; });
    if (it == spec.constants.end())
      throw std::invalid_argument("system '" + std::string(system_name(kind)) +
                                  "' has no constant '" + name + "'");
    if (!std::isfinite(value)) throw std::invalid_argument("constant '" + name + "' must be finite");
    it->second = value;
  }
  return spec;
}

inline SystemSpec make_system(std::string_view name, const std::map<std::string, double>& overrides = {}) {
  return make_system(parse_system_kind(name), overrides);
}

/// Drift F = (f, g) and per-channel diffusion columns G_k = (sigma_k, gamma_k).
struct VectorFields {
  Eigen::VectorXd drift;      // 2d
  Eigen::MatrixXd diffusion;  // 2d x r, column k is channel k

  int dim() const { return static_cast<int>(drift.size() / 2); }
  auto f() const { return drift.head(dim()); }
  auto g() const { return drift.tail(dim()); }
  auto sigma(int k) const { return diffusion.col(k).head(dim()); }
  auto gamma(int k) const { return diffusion.col(k).tail(dim()); }
};

namespace detail {
inline void check_dim(const SystemSpec& spec, Eigen::Index n) {
  if (n != 2 * spec.d)
    throw std::invalid_argument("state has length " + std::to_string(n) + ", system expects " +
                                std::to_string(2 * spec.d));
}
}  // namespace detail

/// Allocation-free evaluation into `out`, which must already be sized 2d and 2d x r.
inline void eval_vector_fields_into(const SystemSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                                    VectorFields& out) {
  const double p = x[0];
  const double q = x[1];
  switch (spec.kind) {
    case SystemKind::LinearOscillator:
      out.drift << -q, p;
      out.diffusion << spec.c(0), 0.0;
      break;
    case SystemKind::Kubo: {
      const double a = spec.c(0), s = spec.c(1);
      out.drift << -a * q, a * p;
      out.diffusion << -s * q, s * p;
      break;
    }
    case SystemKind::NonSeparable: {
      // H0 = (p^2+1)(q^2+1)/2, H1 = 0.1 (p+q)^2
      out.drift << -(p * p + 1.0) * q, p * (q * q + 1.0);
      const double s = 0.2 * (p + q);
      out.diffusion << -s, s;
      break;
    }
    case SystemKind::Synchrotron: {
      // H0 = -w^2 cos q + p^2/2, H1 = s1 sin q, H2 = -s2 cos q
      const double w = spec.c(0), s1 = spec.c(1), s2 = spec.c(2);
      const double sq = std::sin(q), cq = std::cos(q);
      out.drift << -w * w * sq, p;
      out.diffusion(0, 0) = -s1 * cq;
      out.diffusion(1, 0) = 0.0;
      out.diffusion(0, 1) = -s2 * sq;
      out.diffusion(1, 1) = 0.0;
      break;
    }
  }
}

inline VectorFields eval_vector_fields(const SystemSpec& spec, const PhaseState& state) {
  detail::check_dim(spec, state.x.size());
  VectorFields out{Eigen::VectorXd(2 * spec.d), Eigen::MatrixXd(2 * spec.d, spec.r)};
  eval_vector_fields_into(spec, state.x, out);
  return out;
}

/// Hamiltonian H_k at x; k = 0 is the drift Hamiltonian, k = 1..r the diffusion ones.
inline double hamiltonian(const SystemSpec& spec, int k, const PhaseState& state) {
  detail::check_dim(spec, state.x.size());
  if (k < 0 || k > spec.r) throw std::invalid_argument("hamiltonian index out of range");
  const double p = state.x[0], q = state.x[1];
  switch (spec.kind) {
    case SystemKind::LinearOscillator:
      return k == 0 ? 0.5 * (p * p + q * q) : -spec.c(0) * q;
    case SystemKind::Kubo:
      return 0.5 * (k == 0 ? spec.c(0) : spec.c(1)) * (p * p + q * q);
    case SystemKind::NonSeparable:
      return k == 0 ? 0.5 * (p * p + 1.0) * (q * q + 1.0) : 0.1 * (p + q) * (p + q);
    case SystemKind::Synchrotron: {
      const double w = spec.c(0);
      if (k == 0) return -w * w * std::cos(q) + 0.5 * p * p;
      if (k == 1) return spec.c(1) * std::sin(q);
      return -spec.c(2) * std::cos(q);
    }
  }
  return 0.0;
}

inline bool has_invariant(const SystemSpec& spec) {
  return spec.kind == SystemKind::LinearOscillator || spec.kind == SystemKind::Kubo;
}

/// p^2 + q^2: conserved for Kubo, linearly growing in mean for the linear oscillator.
inline double eval_invariant(const SystemSpec& spec, const PhaseState& state) {
  if (!has_invariant(spec))
    throw std::invalid_argument("no tracked invariant for system '" +
                                std::string(system_name(spec.kind)) + "'");
  detail::check_dim(spec, state.x.size());
  return state.x.squaredNorm();
}

}  // namespace sgfnn
