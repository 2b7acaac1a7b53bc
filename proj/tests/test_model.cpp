#include "sgfnn/sgfnn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace sgfnn;

namespace {

// Pair table from explicit rows (p0, q0, p1, q1).
PairTable table(const std::vector<std::array<double, 4>>& rows) {
  PairTable t;
  t.dim = 1;
  t.rows.resize(static_cast<long>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < 4; ++c) t.rows(static_cast<long>(i), c) = rows[i][c];
  return t;
}

Batch all_of(const PairTable& t) {
  Batch b;
  b.indices.resize(static_cast<std::size_t>(t.size()));
  std::iota(b.indices.begin(), b.indices.end(), 0L);
  return b;
}

SgfnnModel zero_model(int nz = 1) {
  auto m = make_sgfnn_model(make_system(SystemKind::LinearOscillator), nz, 0.01);
  std::fill(m.encoder.values.begin(), m.encoder.values.end(), 0.0);
  std::fill(m.decoder.values.begin(), m.decoder.values.end(), 0.0);
  return m;
}

}  // namespace

TEST(Encoder, ZeroWeightsGiveTheOutputBias) {
  auto m = zero_model(2);
  m.encoder.bias(m.encoder.num_layers() - 1) << 0.25, -0.5;
  for (double p : {-1.0, 0.0, 2.0}) {
    const auto z = encode(m, PhaseState::from_pq(p, 1.0), PhaseState::from_pq(0.3, p));
    EXPECT_DOUBLE_EQ(z[0], 0.25);
    EXPECT_DOUBLE_EQ(z[1], -0.5);
  }
}

TEST(Encoder, Deterministic) {
  const auto m = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, {}, 4);
  const auto a = PhaseState::from_pq(0.1, 0.9), b = PhaseState::from_pq(0.12, 0.88);
  EXPECT_EQ(encode(m, a, b), encode(m, a, b));
  EXPECT_THROW(encode(m, PhaseState(Eigen::VectorXd::Zero(4)), b), std::invalid_argument);
}

TEST(Encoder, IncrementFeatures) {
  Architecture arch;
  arch.encoder_input = EncoderInput::Increment;
  const auto m = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, arch, 4);
  Eigen::VectorXd in;
  m.encoder_features(Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(1.01, 1.98), in);
  EXPECT_NEAR(in[2], 1.0, 1e-12);
  EXPECT_NEAR(in[3], -2.0, 1e-12);
  EXPECT_EQ(parse_encoder_input("increment"), EncoderInput::Increment);
  EXPECT_THROW(parse_encoder_input("diff"), std::invalid_argument);
}

TEST(Decoder, ZeroWeightsGiveConstantS) {
  auto m = zero_model();
  m.decoder.bias(m.decoder.num_layers() - 1)[0] = 0.4;
  const auto v = decode_S(m, Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Constant(1, -1.0),
                          Eigen::VectorXd::Constant(1, 2.0));
  EXPECT_DOUBLE_EQ(v.S, 0.4);
  EXPECT_EQ(v.dS_dp1[0], 0.0);
  EXPECT_EQ(v.dS_dq0[0], 0.0);
}

TEST(Decoder, AffineDecoderGradientsAreItsWeights) {
  Architecture arch;
  arch.decoder_hidden = {};
  auto m = make_sgfnn_model(make_system(SystemKind::LinearOscillator), 1, 0.01, arch, 1);
  m.decoder.weight(0) << 0.3, -1.7, 2.2;
  const auto v = decode_S(m, Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 0.1),
                          Eigen::VectorXd::Constant(1, -0.4));
  EXPECT_DOUBLE_EQ(v.dS_dp1[0], 0.3);
  EXPECT_DOUBLE_EQ(v.dS_dq0[0], -1.7);
  EXPECT_THROW(decode_S(m, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)),
               std::invalid_argument);
}

TEST(Decoder, DeltaScalingMultipliesSAndItsGradients) {
  Architecture arch;
  arch.scale_by_delta = true;
  const auto scaled = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, arch, 3);
  const auto plain = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, {}, 3);
  ASSERT_EQ(scaled.decoder, plain.decoder);
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.2), q = Eigen::VectorXd::Constant(1, 0.7),
                        z = Eigen::VectorXd::Constant(1, -0.3);
  const auto a = decode_S(scaled, p, q, z), b = decode_S(plain, p, q, z);
  EXPECT_NEAR(a.S, 0.01 * b.S, 1e-15);
  EXPECT_NEAR(a.dS_dq0[0], 0.01 * b.dS_dq0[0], 1e-15);
  // The vector-valued baseline decoder is never rescaled.
  EXPECT_EQ(make_sfml_model(make_system(SystemKind::Kubo), 1, 0.01, arch, 3).output_scale, 1.0);
}

TEST(Batches, WholeDatasetWhenKEqualsM) {
  const auto ds = generate_dataset(make_system(SystemKind::Kubo), Region::disc(3.0), 4, 5, 0.01, 1);
  const auto pairs = PairTable::from_dataset(ds);
  const auto batches = make_batches(pairs, pairs.size(), 3, 9);
  for (const auto& b : batches) EXPECT_EQ(b.indices, all_of(pairs).indices);
}

TEST(Batches, NearestNeighboursOnALine) {
  std::vector<std::array<double, 4>> rows;
  const std::vector<double> xs{0.9, 0.1, 0.5, 0.0, 0.7, 0.2, 1.0, 0.35, 0.6, 0.05};
  for (double x : xs) rows.push_back({x, 0.0, x, 0.0});
  const auto t = table(rows);
  const auto got = nearest_pairs(t, Eigen::Vector2d(0.0, 0.0), 3);
  std::vector<long> order(xs.size());
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long a, long b) { return xs[a] < xs[b]; });
  std::vector<long> expect(order.begin(), order.begin() + 3);
  std::sort(expect.begin(), expect.end());
  EXPECT_EQ(got, expect);
  EXPECT_EQ(got, (std::vector<long>{1, 3, 9}));
}

TEST(Batches, TiesGoToTheSmallerIndex) {
  const auto t = table({{1, 0, 0, 0}, {-1, 0, 0, 0}, {1, 0, 0, 0}, {3, 0, 0, 0}});
  EXPECT_EQ(nearest_pairs(t, Eigen::Vector2d(0.0, 0.0), 2), (std::vector<long>{0, 1}));
}

TEST(Batches, FixedSeedFixesComposition) {
  const auto ds = generate_dataset(make_system(SystemKind::Kubo), Region::disc(3.0), 20, 10, 0.01, 1);
  const auto pairs = PairTable::from_dataset(ds);
  const auto a = make_batches(pairs, 15, 5, 3), b = make_batches(pairs, 15, 5, 3), c = make_batches(pairs, 15, 5, 4);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs = differs || a[i].indices != c[i].indices;
  EXPECT_TRUE(differs);
  EXPECT_THROW(make_batches(pairs, pairs.size() + 1, 1, 0), std::invalid_argument);
}

TEST(PairTableLayout, RowIndexIsTrajectoryTimesLPlusStep) {
  const auto ds = generate_dataset(make_system(SystemKind::Kubo), Region::disc(3.0), 3, 4, 0.01, 2);
  const auto t = PairTable::from_dataset(ds);
  ASSERT_EQ(t.size(), 12);
  EXPECT_EQ(t.x0(2 * 4 + 1).transpose(), ds.trajectories[2].states.col(1));
  EXPECT_EQ(t.x1(2 * 4 + 1).transpose(), ds.trajectories[2].states.col(2));
}

TEST(LossMse, IdentityDataWithZeroDecoder) {
  const auto m = zero_model();
  const auto t = table({{0.1, 1.0, 0.1, 1.0}, {-0.3, 0.2, -0.3, 0.2}, {2.0, -1.0, 2.0, -1.0}});
  EXPECT_EQ(loss_mse(m, t, all_of(t)), 0.0);
}

TEST(LossMse, SinglePairByHand) {
  const auto m = zero_model();
  const auto t = table({{0.0, 1.0, 0.1, 1.0}});
  EXPECT_NEAR(loss_mse(m, t, all_of(t)), 0.01, 1e-15);
}

TEST(LossTotal, LambdaZeroIsTheMse) {
  const auto m = make_sgfnn_model(make_system(SystemKind::Kubo), 1, 0.01, {}, 5);
  const auto ds = generate_dataset(make_system(SystemKind::Kubo), Region::disc(3.0), 5, 4, 0.01, 2);
  const auto t = PairTable::from_dataset(ds);
  const auto b = all_of(t);
  EXPECT_NEAR(loss_total(m, t, b, 0.0, 1.0), loss_mse(m, t, b), 1e-15);
  EXPECT_THROW(loss_total(m, t, b, -1.0, 1.0), std::invalid_argument);
}

TEST(LossTotal, PerfectGeneratorAndNormalLatentsGiveNearZero) {
  // x1 = x0 is generated by S = 0; a linear encoder reading p0 ~ N(0,1) gives normal z.
  Architecture arch;
  arch.encoder_hidden = {};
  auto m = make_sgfnn_model(make_system(SystemKind::LinearOscillator), 1, 0.01, arch, 1);
  std::fill(m.decoder.values.begin(), m.decoder.values.end(), 0.0);
  m.encoder.weight(0) << 1.0, 0.0, 0.0, 0.0;
  std::mt19937_64 e(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::array<double, 4>> rows;
  for (int i = 0; i < 20000; ++i) {
    const double p = n(e), q = n(e);
    rows.push_back({p, q, p, q});
  }
  const auto t = table(rows);
  EXPECT_LT(loss_total(m, t, all_of(t), 1.0, 1.0), 0.05);
}
