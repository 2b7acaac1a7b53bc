#include "sgfnn/predictor.hpp"
#include "sgfnn/sfml.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sgfnn;

namespace {

SgfnnModel random_model(std::uint64_t seed, double weight_scale = 1.0) {
  auto m = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, {}, seed);
  for (double& v : m.decoder.values) v *= weight_scale;
  return m;
}

}  // namespace

TEST(SgfStep, ZeroDecoderIsTheIdentity) {
  auto m = random_model(1);
  std::fill(m.decoder.values.begin(), m.decoder.values.end(), 0.0);
  const auto x0 = PhaseState::from_pq(0.4, -1.3);
  const auto x1 = sgf_step(m, x0, Eigen::VectorXd::Constant(1, 0.7));
  EXPECT_EQ(x1.x, x0.x);
}

TEST(SgfStep, SatisfiesTheGeneratingRelation) {
  const auto m = random_model(2, 0.5);
  const auto x0 = PhaseState::from_pq(0.2, 0.9);
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(1, -0.4);
  const auto x1 = sgf_step(m, x0, w);
  const auto v = decode_S(m, x1.p(), x0.q(), w);
  EXPECT_NEAR(x1.x[0], x0.x[0] - v.dS_dq0[0], 1e-11);
  EXPECT_NEAR(x1.x[1], x0.x[1] + v.dS_dp1[0], 1e-12);
}

TEST(SgfStep, ResidualsShrinkAndStopAtTolerance) {
  const auto m = random_model(3, 0.5);
  FixedPointTrace trace;
  PredictionConfig pc;
  sgf_step(m, PhaseState::from_pq(0.2, 0.9), Eigen::VectorXd::Constant(1, 0.1), pc, &trace);
  ASSERT_GE(trace.residuals.size(), 2u);
  EXPECT_LE(trace.residuals.back(), 1e-12);
  EXPECT_LT(trace.residuals.back(), trace.residuals.front());
}

TEST(SgfStep, NonConvergenceIsReported) {
  // One iteration cannot meet the tolerance unless dS/dq0 vanishes at the start.
  const auto m = random_model(4);
  PredictionConfig pc;
  pc.max_iter = 1;
  try {
    sgf_step(m, PhaseState::from_pq(0.5, 0.5), Eigen::VectorXd::Constant(1, 1.0), pc);
    FAIL() << "expected PredictionError";
  } catch (const PredictionError& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.residual(), 1e-12);
  }
}

TEST(SgfStep, RejectsBadShapes) {
  const auto m = random_model(5);
  EXPECT_THROW(sgf_step(m, PhaseState::from_pq(0, 0), Eigen::VectorXd::Zero(2)), std::invalid_argument);
  PredictionConfig pc;
  pc.tol = 0.0;
  EXPECT_THROW(sgf_step(m, PhaseState::from_pq(0, 0), Eigen::VectorXd::Zero(1), pc), std::invalid_argument);
}

TEST(Ensemble, ZeroStepsReturnsTheInitialState) {
  const auto m = random_model(6);
  PredictionConfig pc;
  pc.n_traj = 1;
  pc.steps = 0;
  const auto ens = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  ASSERT_EQ(ens.n_traj(), 1);
  EXPECT_EQ(ens.trajectories[0].states.cols(), 1);
  EXPECT_EQ(ens.trajectories[0].states.col(0), Eigen::Vector2d(1.0, 0.0));
}

TEST(Ensemble, FixedSeedAndWorkerIndependence) {
  const auto m = random_model(7, 0.5);
  PredictionConfig pc;
  pc.n_traj = 12;
  pc.steps = 20;
  pc.seed = 5;
  const auto a = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  pc.workers = 4;
  const auto b = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  for (long i = 0; i < a.n_traj(); ++i) EXPECT_EQ(a.trajectories[i].states, b.trajectories[i].states);
  EXPECT_NE(a.trajectories[0].states, a.trajectories[1].states);
  EXPECT_EQ(a.tags.at("model"), "sgfnn");
}

TEST(Ensemble, RecordStrideSubsamples) {
  const auto m = random_model(8, 0.5);
  PredictionConfig pc;
  pc.n_traj = 2;
  pc.steps = 20;
  const auto full = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  pc.record_stride = 5;
  const auto part = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  ASSERT_EQ(part.n_steps(), 4);
  EXPECT_DOUBLE_EQ(part.delta, 0.05);
  EXPECT_EQ(part.trajectories[1].states.col(4), full.trajectories[1].states.col(20));
  pc.steps = 21;
  EXPECT_THROW(predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc), std::invalid_argument);
}

TEST(Ensemble, SfmlRollout) {
  auto m = make_sfml_model(make_system(SystemKind::Kubo), 1, 0.01, {}, 3);
  PredictionConfig pc;
  pc.n_traj = 3;
  pc.steps = 4;
  const auto ens = predict_ensemble(m, PhaseState::from_pq(1.0, 0.0), pc);
  EXPECT_EQ(ens.n_steps(), 4);
  EXPECT_EQ(ens.tags.at("model"), "sfml");
}
