#pragma once

// Data generation: Brownian increments, the implicit midpoint scheme for Stratonovich
// SHS, and trajectory ensembles.

#include "sgfnn/parallel.hpp"
#include "sgfnn/rng.hpp"
#include "sgfnn/systems.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgfnn {

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, int iterations, double residual, long trajectory = -1,
                   long step = -1)
      : std::runtime_error(what), iterations_(iterations), residual_(residual),
        trajectory_(trajectory), step_(step) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }
  long trajectory() const { return trajectory_; }
  long step() const { return step_; }

 private:
  int iterations_;
  double residual_;
  long trajectory_;
  long step_;
};

/// steps x r matrix of i.i.d. N(0, delta) entries.
inline Eigen::MatrixXd brownian_increments(std::uint64_t seed, int r, long steps, double delta) {
  if (r < 1 || steps < 0) throw std::invalid_argument("brownian_increments: need r >= 1, steps >= 0");
  if (!(delta >= 0.0)) throw std::invalid_argument("brownian_increments: delta must be >= 0");
  Eigen::MatrixXd dW(steps, r);
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = std::sqrt(delta);
  for (long i = 0; i < steps; ++i)
    for (int k = 0; k < r; ++k) dW(i, k) = scale * normal(engine);
  return dW;
}

struct MidpointOptions {
  double tol = 1e-12;
  int max_iter = 100;
};

/// Implicit midpoint step x1 = x0 + delta F(xm) + sum_k G_k(xm) dW_k, xm = (x0 + x1)/2,
/// solved by fixed-point iteration from x1 = x0. Reuses its buffers across calls.
class MidpointStepper {
 public:
  explicit MidpointStepper(const SystemSpec& spec, MidpointOptions opts = {})
      : spec_(spec), opts_(opts), fields_{Eigen::VectorXd(2 * spec.d), Eigen::MatrixXd(2 * spec.d, spec.r)},
        mid_(2 * spec.d), next_(2 * spec.d) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("midpoint: tol must be > 0");
    if (opts.max_iter < 1) throw std::invalid_argument("midpoint: max_iter must be >= 1");
  }

  /// Returns the iteration count; x1 receives the new state.
  int step(const Eigen::Ref<const Eigen::VectorXd>& x0, double delta,
           const Eigen::Ref<const Eigen::VectorXd>& dW, Eigen::Ref<Eigen::VectorXd> x1) {
    detail::check_dim(spec_, x0.size());
    if (dW.size() != spec_.r) throw std::invalid_argument("midpoint: dW must have r entries");
    x1 = x0;
    double residual = 0.0;
    for (int it = 1; it <= opts_.max_iter; ++it) {
      mid_ = 0.5 * (x0 + x1);
      eval_vector_fields_into(spec_, mid_, fields_);
      next_ = x0 + delta * fields_.drift;
      next_.noalias() += fields_.diffusion * dW;
      residual = (next_ - x1).norm();
      x1 = next_;
      if (!std::isfinite(residual)) break;
      if (residual < opts_.tol) return it;
    }
    throw IntegrationError("midpoint fixed-point iteration did not converge (residual " +
                               std::to_string(residual) + ")",
                           opts_.max_iter, residual);
  }

  const SystemSpec& spec() const { return spec_; }

 private:
  SystemSpec spec_;
  MidpointOptions opts_;
  VectorFields fields_;
  Eigen::VectorXd mid_, next_;
};

inline PhaseState midpoint_step(const SystemSpec& spec, const PhaseState& x, double delta,
                                const Eigen::VectorXd& dW, double tol = 1e-12, int max_iter = 100) {
  MidpointStepper stepper(spec, {tol, max_iter});
  Eigen::VectorXd x1(x.x.size());
  stepper.step(x.x, delta, dW, x1);
  return PhaseState(std::move(x1));
}

/// Sampler for initial conditions.
struct Region {
  enum class Kind { Disc, Point };
  Kind kind = Kind::Disc;
  double radius = 3.0;    // Disc: uniform in the 2d-ball of this radius
  Eigen::VectorXd point;  // Point: every trajectory starts here

  static Region disc(double radius) { return {Kind::Disc, radius, {}}; }
  static Region at(const PhaseState& x) { return {Kind::Point, 0.0, x.x}; }

  Eigen::VectorXd sample(int d, std::mt19937_64& engine) const {
    if (kind == Kind::Point) return point;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    Eigen::VectorXd dir(2 * d);
    if (d == 1) {
      const double theta = 2.0 * std::numbers::pi * uniform(engine);
      dir << std::cos(theta), std::sin(theta);
    } else {
      for (int i = 0; i < 2 * d; ++i) dir[i] = normal(engine);
      dir.normalize();
    }
    // Area-uniform: radius = R u^(1/(2d)), i.e. R sqrt(u) in the plane.
    return radius * std::pow(uniform(engine), 1.0 / (2.0 * d)) * dir;
  }
};

/// States stored column-wise: states.col(j) is x_j, spacing `delta` apart.
struct Trajectory {
  Eigen::MatrixXd states;
  double delta = 0.0;
  double t0 = 0.0;

  long length() const { return states.cols(); }
  PhaseState state(long j) const { return PhaseState(Eigen::VectorXd(states.col(j))); }
};

/// N trajectories of equal length and spacing plus provenance.
struct Dataset {
  SystemSpec system;
  std::vector<Trajectory> trajectories;
  double delta = 0.0;        // spacing between stored states
  long record_stride = 1;    // integration steps per stored state
  std::uint64_t seed = 0;
  Region region;
  std::map<std::string, std::string> tags;  // e.g. source, model, checkpoint hash

  int dim() const { return system.d; }
  long n_traj() const { return static_cast<long>(trajectories.size()); }
  long n_steps() const { return trajectories.empty() ? 0 : trajectories.front().length() - 1; }
  long n_pairs() const { return n_traj() * n_steps(); }
};

struct SimulationOptions {
  MidpointOptions midpoint{};
  long record_stride = 1;
  int workers = 1;
};

/// Integrates one trajectory of `steps` midpoint steps, keeping every record_stride-th state.
inline Trajectory simulate_trajectory(MidpointStepper& stepper, const Eigen::VectorXd& x0,
                                      const Eigen::MatrixXd& dW, double delta, long record_stride) {
  const long steps = dW.rows();
  if (record_stride < 1 || steps % record_stride != 0)
    throw std::invalid_argument("simulate: steps must be a multiple of record_stride");
  Trajectory traj;
  traj.delta = delta * static_cast<double>(record_stride);
  traj.states.resize(x0.size(), steps / record_stride + 1);
  traj.states.col(0) = x0;
  Eigen::VectorXd cur = x0, next(x0.size());
  for (long s = 0; s < steps; ++s) {
    try {
      stepper.step(cur, delta, dW.row(s).transpose(), next);
    } catch (const IntegrationError& e) {
      throw IntegrationError(e.what(), e.iterations(), e.residual(), -1, s);
    }
    cur.swap(next);
    if ((s + 1) % record_stride == 0) traj.states.col((s + 1) / record_stride) = cur;
  }
  return traj;
}

/// N independent trajectories of L recorded steps. Trajectory i draws its initial point
/// and Brownian path from sub-seeds of (seed, i), so output is independent of `workers`.
inline Dataset generate_dataset(const SystemSpec& spec, const Region& region, long N, long L, double delta,
                                std::uint64_t seed, const SimulationOptions& opts = {}) {
  if (N < 1 || L < 1) throw std::invalid_argument("generate_dataset: N and L must be >= 1");
  if (!(delta >= 0.0)) throw std::invalid_argument("generate_dataset: delta must be >= 0");
  if (region.kind == Region::Kind::Point) detail::check_dim(spec, region.point.size());
  Dataset ds;
  ds.system = spec;
  ds.delta = delta * static_cast<double>(opts.record_stride);
  ds.record_stride = opts.record_stride;
  ds.seed = seed;
  ds.region = region;
  ds.tags["source"] = "simulation";
  ds.trajectories.resize(static_cast<std::size_t>(N));
  const long steps = L * opts.record_stride;
  parallel_for(static_cast<std::size_t>(N), opts.workers, [&](std::size_t i) {
    MidpointStepper stepper(spec, opts.midpoint);
    auto engine = make_engine(seed, Stream::InitialPoint, i);
    const Eigen::VectorXd x0 = region.sample(spec.d, engine);
    const Eigen::MatrixXd dW = brownian_increments(derive_seed(seed, Stream::Brownian, i), spec.r, steps, delta);
    try {
      ds.trajectories[i] = simulate_trajectory(stepper, x0, dW, delta, opts.record_stride);
    } catch (const IntegrationError& e) {
      throw IntegrationError("trajectory " + std::to_string(i) + ": " + e.what(), e.iterations(),
                             e.residual(), static_cast<long>(i), e.step());
    }
  });
  return ds;
}

}  // namespace sgfnn
