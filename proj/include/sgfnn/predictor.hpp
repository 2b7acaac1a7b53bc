#pragma once

// Rollouts of trained models. The generating-function step solves its implicit half by
// fixed-point iteration on p; the baseline step is explicit.

#include "sgfnn/model.hpp"
#include "sgfnn/parallel.hpp"
#include "sgfnn/rng.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/sfml.hpp"
#include "sgfnn/sgfnn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace sgfnn {

class PredictionError : public std::runtime_error {
 public:
  PredictionError(const std::string& what, int iterations, double residual, long trajectory = -1, long step = -1)
      : std::runtime_error(what), iterations_(iterations), residual_(residual), trajectory_(trajectory),
        step_(step) {}
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

struct PredictionConfig {
  double tol = 1e-12;
  int max_iter = 100;
  long steps = 0;
  long n_traj = 1;
  std::uint64_t seed = 0;
  long record_stride = 1;
  int workers = 1;
};

struct FixedPointTrace {
  std::vector<double> residuals;
};

/// One step of the generating relation for a fixed omega, reusing its buffers.
class SgfStepper {
 public:
  SgfStepper(const SgfnnModel& model, double tol = 1e-12, int max_iter = 100)
      : model_(model), tol_(tol), max_iter_(max_iter), in_(2 * model.dim + model.latent_dim),
        p_next_(model.dim) {
    if (!(tol > 0.0)) throw std::invalid_argument("prediction tol must be > 0");
    if (max_iter < 1) throw std::invalid_argument("prediction max_iter must be >= 1");
  }

  /// p^{j+1} = p0 - dS/dq0(p^j, q0, omega) from p^0 = p0 until |p^{j+1} - p^j| <= tol, then
  /// q1 = q0 + dS/dp1(p1, q0, omega). Returns the iteration count.
  int step(const Eigen::Ref<const Eigen::VectorXd>& x0, const Eigen::Ref<const Eigen::VectorXd>& omega,
           Eigen::Ref<Eigen::VectorXd> x1, FixedPointTrace* trace = nullptr) {
    const int d = model_.dim;
    if (x0.size() != 2 * d || omega.size() != model_.latent_dim)
      throw std::invalid_argument("sgf_step: expected x0 of length 2d and omega of length n_z");
    in_.segment(0, d) = x0.head(d);
    in_.segment(d, d) = x0.tail(d);
    in_.tail(model_.latent_dim) = omega;
    double residual = 0.0;
    for (int it = 1; it <= max_iter_; ++it) {
      nn::forward(model_.decoder, in_, ws_);
      const auto& g = nn::input_gradient(model_.decoder, ws_);
      p_next_ = x0.head(d) - model_.output_scale * g.segment(d, d);
      residual = (p_next_ - in_.head(d)).norm();
      in_.head(d) = p_next_;
      if (trace) trace->residuals.push_back(residual);
      if (!std::isfinite(residual)) break;
      if (residual <= tol_) {
        nn::forward(model_.decoder, in_, ws_);
        const auto& g1 = nn::input_gradient(model_.decoder, ws_);
        x1.head(d) = p_next_;
        x1.tail(d) = x0.tail(d) + model_.output_scale * g1.head(d);
        return it;
      }
    }
    throw PredictionError("fixed-point iteration did not converge (last residual " + std::to_string(residual) + ")",
                          max_iter_, residual);
  }

 private:
  const SgfnnModel& model_;
  double tol_;
  int max_iter_;
  nn::MlpWorkspace ws_;
  Eigen::VectorXd in_, p_next_;
};

inline PhaseState sgf_step(const SgfnnModel& model, const PhaseState& x0, const Eigen::VectorXd& omega,
                           const PredictionConfig& cfg = {}, FixedPointTrace* trace = nullptr) {
  SgfStepper stepper(model, cfg.tol, cfg.max_iter);
  Eigen::VectorXd x1(x0.x.size());
  stepper.step(x0.x, omega, x1, trace);
  return PhaseState(std::move(x1));
}

/// n_traj independent rollouts of `steps` steps from x0, each step drawing a fresh
/// standard-normal omega from the trajectory's own sub-stream.
template <class Model>
Dataset predict_ensemble(const Model& model, const PhaseState& x0, const PredictionConfig& cfg) {
  static_assert(std::is_base_of_v<LatentModel, Model>);
  if (x0.dim() != model.dim) throw std::invalid_argument("predict: x0 dimension does not match the model");
  if (cfg.n_traj < 1 || cfg.steps < 0) throw std::invalid_argument("predict: need n_traj >= 1, steps >= 0");
  if (cfg.record_stride < 1 || cfg.steps % cfg.record_stride != 0)
    throw std::invalid_argument("predict: steps must be a multiple of record_stride");
  Dataset out;
  out.system = model.system;
  out.delta = model.delta * static_cast<double>(cfg.record_stride);
  out.record_stride = cfg.record_stride;
  out.seed = cfg.seed;
  out.region = Region::at(x0);
  out.tags["source"] = std::string(Model::kind_name) + "-prediction";
  out.tags["model"] = Model::kind_name;
  out.trajectories.resize(static_cast<std::size_t>(cfg.n_traj));
  const long n_rec = cfg.steps / cfg.record_stride;
  parallel_for(static_cast<std::size_t>(cfg.n_traj), cfg.workers, [&](std::size_t i) {
    auto engine = make_engine(cfg.seed, Stream::Prediction, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    Trajectory traj;
    traj.delta = out.delta;
    traj.states.resize(2 * model.dim, n_rec + 1);
    traj.states.col(0) = x0.x;
    Eigen::VectorXd cur = x0.x, next(x0.x.size()), omega(model.latent_dim);
    [[maybe_unused]] nn::MlpWorkspace ws;
    std::conditional_t<std::is_same_v<Model, SgfnnModel>, SgfStepper, int> stepper = [&] {
      if constexpr (std::is_same_v<Model, SgfnnModel>)
        return SgfStepper(model, cfg.tol, cfg.max_iter);
      else
        return 0;
    }();
    for (long s = 0; s < cfg.steps; ++s) {
      for (int k = 0; k < model.latent_dim; ++k) omega[k] = normal(engine);
      if constexpr (std::is_same_v<Model, SgfnnModel>) {
        try {
          stepper.step(cur, omega, next);
        } catch (const PredictionError& e) {
          throw PredictionError("trajectory " + std::to_string(i) + ", step " + std::to_string(s) + ": " + e.what(),
                                e.iterations(), e.residual(), static_cast<long>(i), s);
        }
      } else {
        next = sfml_step(model, cur, omega, ws);
      }
      if (!next.allFinite())
        throw PredictionError("trajectory " + std::to_string(i) + " left the finite range at step " +
                                  std::to_string(s),
                              0, 0.0, static_cast<long>(i), s);
      cur.swap(next);
      if ((s + 1) % cfg.record_stride == 0) traj.states.col((s + 1) / cfg.record_stride) = cur;
    }
    out.trajectories[i] = std::move(traj);
  });
  return out;
}

}  // namespace sgfnn
