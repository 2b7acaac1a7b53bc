// Randomised properties checked over many seeded draws.

#include "sgfnn/eval.hpp"
#include "sgfnn/predictor.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/sgfnn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace sgfnn;

namespace {

constexpr SystemKind kAll[] = {SystemKind::LinearOscillator, SystemKind::Kubo, SystemKind::NonSeparable,
                               SystemKind::Synchrotron};

double uniform(std::mt19937_64& e, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(e); }

}  // namespace

TEST(Property, VectorFieldsAreHamiltonian) {
  // (f, g) = (-dH0/dq, dH0/dp) and (sigma_k, gamma_k) = (-dHk/dq, dHk/dp).
  std::mt19937_64 e(1);
  const double h = 1e-6;
  for (auto kind : kAll) {
    const auto spec = make_system(kind);
    for (int trial = 0; trial < 50; ++trial) {
      const double p = uniform(e, -3, 3), q = uniform(e, -3, 3);
      const auto v = eval_vector_fields(spec, PhaseState::from_pq(p, q));
      for (int k = 0; k <= spec.r; ++k) {
        const double dHdp = (hamiltonian(spec, k, PhaseState::from_pq(p + h, q)) -
                             hamiltonian(spec, k, PhaseState::from_pq(p - h, q))) / (2 * h);
        const double dHdq = (hamiltonian(spec, k, PhaseState::from_pq(p, q + h)) -
                             hamiltonian(spec, k, PhaseState::from_pq(p, q - h))) / (2 * h);
        const double fp = k == 0 ? v.f()[0] : v.sigma(k - 1)[0];
        const double fq = k == 0 ? v.g()[0] : v.gamma(k - 1)[0];
        EXPECT_NEAR(fp, -dHdq, 1e-7 * (1 + std::abs(dHdq))) << system_name(kind) << " k=" << k;
        EXPECT_NEAR(fq, dHdp, 1e-7 * (1 + std::abs(dHdp))) << system_name(kind) << " k=" << k;
      }
    }
  }
}

TEST(Property, MidpointIsTimeReversible) {
  std::mt19937_64 e(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto kind : kAll) {
    const auto spec = make_system(kind);
    for (int trial = 0; trial < 30; ++trial) {
      const auto x0 = PhaseState::from_pq(uniform(e, -2, 2), uniform(e, -2, 2));
      Eigen::VectorXd dW(spec.r);
      for (int k = 0; k < spec.r; ++k) dW[k] = 0.1 * n(e);
      const auto x1 = midpoint_step(spec, x0, 0.01, dW);
      const auto back = midpoint_step(spec, x1, -0.01, Eigen::VectorXd(-dW));
      EXPECT_LT((back.x - x0.x).norm(), 1e-10) << system_name(kind);
    }
  }
}

TEST(Property, MidpointStepIsSymplectic) {
  std::mt19937_64 e(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto kind : kAll) {
    const auto spec = make_system(kind);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Vector2d x(uniform(e, -2, 2), uniform(e, -2, 2));
      Eigen::VectorXd dW(spec.r);
      for (int k = 0; k < spec.r; ++k) dW[k] = 0.1 * n(e);
      const double r = symplecticity_residual(
          [&](const Eigen::VectorXd& y) { return midpoint_step(spec, PhaseState(y), 0.01, dW).x; }, x);
      EXPECT_LT(r, 1e-7) << system_name(kind);
    }
  }
}

TEST(Property, KuboCircleKeptForAnyConstants) {
  std::mt19937_64 e(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = make_system(SystemKind::Kubo, {{"a", uniform(e, -3, 3)}, {"sigma", uniform(e, 0, 1)}});
    const auto x0 = PhaseState::from_pq(uniform(e, -3, 3), uniform(e, -3, 3));
    Eigen::VectorXd dW(1);
    dW << 0.1 * n(e);
    const auto x1 = midpoint_step(spec, x0, 0.01, dW);
    EXPECT_NEAR(x1.x.squaredNorm(), x0.x.squaredNorm(), 1e-11 * (1 + x0.x.squaredNorm()));
  }
}

TEST(Property, GeneratingFunctionStepIsSymplecticForRandomDecoders) {
  std::mt19937_64 e(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto kind : {SystemKind::Kubo, SystemKind::Synchrotron}) {
    const auto spec = make_system(kind);
    for (int draw = 0; draw < 10; ++draw) {
      auto m = make_sgfnn_model(spec, spec.r, 0.01, {}, 100 + static_cast<std::uint64_t>(draw));
      for (double& v : m.decoder.values) v *= 0.5;
      for (int pt = 0; pt < 5; ++pt) {
        const Eigen::Vector2d x(uniform(e, -2, 2), uniform(e, -2, 2));
        Eigen::VectorXd w(spec.r);
        for (int k = 0; k < spec.r; ++k) w[k] = n(e);
        const double r =
            symplecticity_residual([&](const Eigen::VectorXd& y) { return sgf_step(m, PhaseState(y), w).x; }, x);
        EXPECT_LT(r, 1e-5);
      }
    }
  }
}

TEST(Property, DistributionLossIgnoresSampleOrder) {
  std::mt19937_64 e(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd z(40, 2);
    for (long i = 0; i < z.rows(); ++i) z(i, 0) = n(e), z(i, 1) = 0.5 * n(e) + 0.2;
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(z.rows());
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + z.rows(), e);
    const Eigen::MatrixXd zp = perm * z;
    const auto a = loss_distribution(z, {}, true), b = loss_distribution(zp, {}, true);
    EXPECT_NEAR(a.total, b.total, 1e-12);
    EXPECT_LT((perm * a.grad - b.grad).norm(), 1e-10);
  }
}

TEST(Property, SeedStreamsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL})
    for (auto s : {Stream::InitialPoint, Stream::Brownian, Stream::Batches, Stream::Init, Stream::Prediction,
                   Stream::Truth, Stream::Holdout})
      for (std::uint64_t i = 0; i < 20; ++i) seen.insert(derive_seed(seed, s, i));
  EXPECT_EQ(seen.size(), 3u * 7u * 20u);
}
