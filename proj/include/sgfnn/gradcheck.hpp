#pragma once

// Finite-difference gate for every analytic gradient used in training: the pair loss, the
// distribution loss, their sum (for both model kinds) and the input gradient of S.

#include "sgfnn/nn.hpp"
#include "sgfnn/rng.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/sfml.hpp"
#include "sgfnn/sgfnn.hpp"
#include "sgfnn/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace sgfnn {

struct GradientGateConfig {
  SystemSpec system = make_system(SystemKind::Synchrotron);  // two noise channels: exercises the correlation term
  int latent_dim = 0;                                          // 0: system.r
  int batches = 10;
  long pairs_per_batch = 5;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double input_tolerance = 1e-6;
  double h = 1e-5;
  LossOptions loss{};
};

struct GradientGateCase {
  std::string name;
  int batch = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradientGateReport {
  std::vector<GradientGateCase> cases;
  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
  }
  double worst(const std::string& name) const {
    double w = 0.0;
    for (const auto& c : cases)
      if (c.name == name) w = std::max(w, c.max_rel_error);
    return w;
  }
};

namespace detail {

// Checks d(loss)/d(theta) over [encoder | decoder] against central differences.
template <class Model, class Loss>
nn::GradCheckReport check_parameters(Model& model, std::span<const double> analytic, Loss&& loss, double tol,
                                     double h) {
  std::vector<double> theta(model.encoder.values);
  theta.insert(theta.end(), model.decoder.values.begin(), model.decoder.values.end());
  const std::size_t ne = model.encoder.size();
  auto eval = [&] {
    std::copy(theta.begin(), theta.begin() + static_cast<long>(ne), model.encoder.values.begin());
    std::copy(theta.begin() + static_cast<long>(ne), theta.end(), model.decoder.values.begin());
    return loss();
  };
  auto rep = nn::finite_diff_check(std::span<double>(theta), analytic, eval, tol, h);
  eval();  // restore
  return rep;
}

}  // namespace detail

/// Runs every check on `batches` toy batches, each holding one pair from each of
/// `pairs_per_batch` independent trajectories started in the radius-3 disc. Odd
/// batches use the increment encoder input, the delta-scaled generating function and the
/// mean-as-first-moment and smoothed-target options so each code path is covered.
inline GradientGateReport gradient_gate(const GradientGateConfig& cfg) {
  GradientGateReport report;
  const int nz = cfg.latent_dim > 0 ? cfg.latent_dim : cfg.system.r;
  for (int b = 0; b < cfg.batches; ++b) {
    const auto data_seed = derive_seed(cfg.seed, Stream::Holdout, static_cast<std::uint64_t>(b));
    const Dataset ds = generate_dataset(cfg.system, Region::disc(3.0), cfg.pairs_per_batch, 1, 0.01, data_seed);
    const PairTable pairs = PairTable::from_dataset(ds);
    std::vector<long> batch(static_cast<std::size_t>(cfg.pairs_per_batch));
    for (long i = 0; i < cfg.pairs_per_batch; ++i) batch[i] = i;

    Architecture arch;
    LossOptions loss = cfg.loss;
    if (b % 2 == 1) {
      arch.encoder_input = EncoderInput::Increment;
      arch.scale_by_delta = true;
      loss.distribution.mean_as_first_moment = true;
      loss.distribution.first_moment_weight = 5.0;
      loss.distribution.kde.smooth_target = true;
    }
    const auto model_seed = derive_seed(cfg.seed, Stream::Init, static_cast<std::uint64_t>(100 + b));
    auto sgf = make_sgfnn_model(cfg.system, nz, 0.01, arch, model_seed);
    auto sfml = make_sfml_model(cfg.system, nz, 0.01, arch, model_seed);

    auto record = [&](const std::string& name, const nn::GradCheckReport& r, double tol) {
      report.cases.push_back({name, b, r.max_rel_error, tol, r.max_rel_error < tol});
    };

    // L_MSE: lambda = 0.
    LossOptions mse_only = loss;
    mse_only.lambda = 0.0;
    std::vector<double> g0(sgf.parameter_count()), g1(sgf.parameter_count());
    loss_and_gradient(sgf, pairs, batch, mse_only, g0);
    record("loss_mse",
           detail::check_parameters(
               sgf, g0, [&] { return loss_and_gradient(sgf, pairs, batch, mse_only, {}).total; }, cfg.tolerance,
               cfg.h),
           cfg.tolerance);

    // L_D alone: the lambda = 1 gradient minus the lambda = 0 one.
    LossOptions unit = loss;
    unit.lambda = 1.0;
    loss_and_gradient(sgf, pairs, batch, unit, g1);
    std::vector<double> gd(g1.size());
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = g1[i] - g0[i];
    record("loss_distribution",
           detail::check_parameters(
               sgf, gd, [&] { return loss_and_gradient(sgf, pairs, batch, unit, {}).distribution; }, cfg.tolerance,
               cfg.h),
           cfg.tolerance);

    // L_total at the configured lambda.
    std::vector<double> gt(sgf.parameter_count());
    loss_and_gradient(sgf, pairs, batch, loss, gt);
    record("loss_total",
           detail::check_parameters(
               sgf, gt, [&] { return loss_and_gradient(sgf, pairs, batch, loss, {}).total; }, cfg.tolerance, cfg.h),
           cfg.tolerance);

    std::vector<double> gs(sfml.parameter_count());
    loss_and_gradient(sfml, pairs, batch, loss, gs);
    record("sfml_total",
           detail::check_parameters(
               sfml, gs, [&] { return loss_and_gradient(sfml, pairs, batch, loss, {}).total; }, cfg.tolerance,
               cfg.h),
           cfg.tolerance);

    // Input gradient of S at each pair's (p1, q0, z).
    const int d = sgf.dim;
    double worst = 0.0;
    nn::MlpWorkspace ws;
    Eigen::VectorXd in;
    for (long i : batch) {
      sgf.encoder_features(pairs.x0(i).transpose(), pairs.x1(i).transpose(), in);
      const Eigen::VectorXd z = nn::forward(sgf.encoder, in, ws);
      Eigen::VectorXd pq(2 * d);
      pq << pairs.x1(i).head(d).transpose(), pairs.x0(i).tail(d).transpose();
      const auto val = decode_S(sgf, pq.head(d), pq.tail(d), z);
      Eigen::VectorXd analytic(2 * d);
      analytic << val.dS_dp1, val.dS_dq0;
      auto S = [&] { return decode_S(sgf, pq.head(d), pq.tail(d), z).S; };
      const auto r = nn::finite_diff_check(std::span<double>(pq.data(), static_cast<std::size_t>(pq.size())),
                                           std::span<const double>(analytic.data(), analytic.size()), S,
                                           cfg.input_tolerance, cfg.h);
      worst = std::max(worst, r.max_rel_error);
    }
    report.cases.push_back({"decode_S_input", b, worst, cfg.input_tolerance, worst < cfg.input_tolerance});
  }
  return report;
}

}  // namespace sgfnn
