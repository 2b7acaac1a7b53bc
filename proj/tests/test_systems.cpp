#include "sgfnn/systems.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgfnn;

TEST(Systems, LinearVectorFieldsAtUnitQ) {
  const auto spec = make_system(SystemKind::LinearOscillator);
  const auto v = eval_vector_fields(spec, PhaseState::from_pq(0.0, 1.0));
  EXPECT_DOUBLE_EQ(v.f()[0], -1.0);
  EXPECT_DOUBLE_EQ(v.g()[0], 0.0);
  EXPECT_DOUBLE_EQ(v.sigma(0)[0], 0.1);
  EXPECT_DOUBLE_EQ(v.gamma(0)[0], 0.0);
}

TEST(Systems, KuboVectorFieldsAtUnitP) {
  const auto spec = make_system(SystemKind::Kubo);
  const auto v = eval_vector_fields(spec, PhaseState::from_pq(1.0, 0.0));
  EXPECT_DOUBLE_EQ(v.f()[0], 0.0);
  EXPECT_DOUBLE_EQ(v.g()[0], 2.0);
  EXPECT_DOUBLE_EQ(v.sigma(0)[0], 0.0);
  EXPECT_DOUBLE_EQ(v.gamma(0)[0], 0.3);
}

TEST(Systems, NonSeparableVanishesAtOrigin) {
  const auto spec = make_system(SystemKind::NonSeparable);
  const auto v = eval_vector_fields(spec, PhaseState::from_pq(0.0, 0.0));
  EXPECT_EQ(v.drift.norm(), 0.0);
  EXPECT_EQ(v.diffusion.norm(), 0.0);
}

TEST(Systems, SynchrotronHasTwoChannels) {
  const auto spec = make_system(SystemKind::Synchrotron);
  EXPECT_EQ(spec.r, 2);
  const auto v = eval_vector_fields(spec, PhaseState::from_pq(0.5, 0.3));
  EXPECT_EQ(v.diffusion.cols(), 2);
  EXPECT_NEAR(v.f()[0], -std::sin(0.3), 1e-15);
  EXPECT_NEAR(v.g()[0], 0.5, 1e-15);
  EXPECT_NEAR(v.sigma(0)[0], -0.2 * std::cos(0.3), 1e-15);
  EXPECT_NEAR(v.sigma(1)[0], -0.2 * std::sin(0.3), 1e-15);
}

TEST(Systems, ConstantOverrides) {
  const auto spec = make_system("kubo", {{"sigma", 0.5}});
  EXPECT_DOUBLE_EQ(spec.constant("sigma"), 0.5);
  EXPECT_DOUBLE_EQ(spec.constant("a"), 2.0);
  EXPECT_THROW(make_system("kubo", {{"beta", 1.0}}), std::invalid_argument);
  EXPECT_THROW(make_system("kubo", {{"a", NAN}}), std::invalid_argument);
  EXPECT_THROW(make_system("pendulum"), std::invalid_argument);
}

TEST(Systems, NameParsingIsLenient) {
  EXPECT_EQ(parse_system_kind("Linear_Oscillator"), SystemKind::LinearOscillator);
  EXPECT_EQ(parse_system_kind("non-separable"), SystemKind::NonSeparable);
  EXPECT_EQ(parse_system_kind("SYNCHROTRON"), SystemKind::Synchrotron);
}

TEST(Systems, WrongStateLengthRejected) {
  const auto spec = make_system(SystemKind::Kubo);
  EXPECT_THROW(eval_vector_fields(spec, PhaseState(Eigen::VectorXd::Zero(3))), std::invalid_argument);
  EXPECT_THROW(hamiltonian(spec, 2, PhaseState::from_pq(0, 0)), std::invalid_argument);
}

TEST(Systems, KuboInvariant) {
  const auto spec = make_system(SystemKind::Kubo);
  EXPECT_DOUBLE_EQ(eval_invariant(spec, PhaseState::from_pq(1.0, 0.0)), 1.0);
  EXPECT_NEAR(eval_invariant(spec, PhaseState::from_pq(0.6, 0.8)), 1.0, 1e-15);
}

TEST(Systems, InvariantUnsupportedForNonSeparable) {
  const auto spec = make_system(SystemKind::NonSeparable);
  EXPECT_THROW(eval_invariant(spec, PhaseState::from_pq(0.1, 0.2)), std::invalid_argument);
  EXPECT_THROW(eval_invariant(make_system(SystemKind::Synchrotron), PhaseState::from_pq(0, 0)),
               std::invalid_argument);
}
