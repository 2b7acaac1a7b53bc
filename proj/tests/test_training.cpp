#include "sgfnn/cli.hpp"
#include "sgfnn/sfml.hpp"
#include "sgfnn/sgfnn.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace sgfnn;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.K = 40;
  c.n_batches = 4;
  c.epochs = 2;
  c.seed = 11;
  c.arch.encoder_hidden = {8, 8};
  c.arch.decoder_hidden = {8, 8};
  return c;
}

Dataset small_data(std::uint64_t seed = 1) {
  return generate_dataset(make_system(SystemKind::Synchrotron), Region::disc(3.0), 10, 10, 0.01, seed);
}

}  // namespace

TEST(Training, ZeroLearningRateKeepsParameters) {
  auto cfg = small_config();
  cfg.epochs = 1;
  cfg.adam.learning_rate = 0.0;
  const auto ds = small_data();
  const auto init = make_sgfnn_model(ds.system, 2, ds.delta, cfg.arch, cfg.seed);
  const auto res = train(ds, cfg);
  EXPECT_EQ(res.model, init);
  ASSERT_EQ(res.history.size(), 4u);
  for (const auto& r : res.history) EXPECT_GT(r.loss.total, 0.0);
}

TEST(Training, FixedSeedGivesIdenticalCheckpoints) {
  const auto ds = small_data();
  const auto a = train(ds, small_config());
  const auto b = train(ds, small_config());
  EXPECT_EQ(a.model, b.model);
  auto other = small_config();
  other.seed = 12;
  EXPECT_FALSE(train(ds, other).model == a.model);
}

TEST(Training, WorkerCountDoesNotChangeResults) {
  const auto ds = small_data();
  auto cfg = small_config();
  cfg.K = 100;
  const auto a = train(ds, cfg);
  cfg.workers = 3;
  const auto b = train(ds, cfg);
  EXPECT_EQ(a.model, b.model);
}

TEST(Training, RecomputedBatchesChangeTheTrajectory) {
  const auto ds = small_data();
  auto cfg = small_config();
  const auto fixed = train(ds, cfg);
  cfg.recompute_batches = true;
  const auto fresh = train(ds, cfg);
  EXPECT_EQ(fixed.history[0].loss.total, fresh.history[0].loss.total);
  EXPECT_FALSE(fixed.model == fresh.model);
}

TEST(Training, LatentDimensionDefaultsToNoiseChannels) {
  const auto ds = small_data();
  EXPECT_EQ(train(ds, small_config()).model.latent_dim, 2);
  auto cfg = small_config();
  cfg.latent_dim = 3;
  EXPECT_EQ(train(ds, cfg).model.latent_dim, 3);
}

TEST(Training, NonFiniteLossRaisesWithContext) {
  auto ds = small_data();
  ds.trajectories[3].states(0, 4) = std::numeric_limits<double>::quiet_NaN();
  auto cfg = small_config();
  cfg.K = 100;  // every batch holds every pair
  try {
    train(ds, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_EQ(e.batch(), 0);
  }
}

TEST(Training, RejectsBadConfigs) {
  const auto ds = small_data();
  auto cfg = small_config();
  cfg.K = 1000;
  EXPECT_THROW(train(ds, cfg), std::invalid_argument);
  cfg = small_config();
  cfg.loss.lambda = -1.0;
  EXPECT_THROW(train(ds, cfg), std::invalid_argument);
}

TEST(Training, AnalyticGradientMatchesFiniteDifferencesOnDeltaScaledModel) {
  const auto ds = small_data(3);
  const auto pairs = PairTable::from_dataset(ds);
  Architecture arch;
  arch.encoder_hidden = {6};
  arch.decoder_hidden = {6, 6};
  arch.encoder_input = EncoderInput::Increment;
  arch.scale_by_delta = true;
  auto m = make_sgfnn_model(ds.system, 2, ds.delta, arch, 5);
  std::vector<long> batch{0, 11, 22, 33, 44, 55};
  LossOptions opts;
  opts.distribution.tau = 0.05;
  opts.distribution.kde.smooth_target = true;
  std::vector<double> g(m.parameter_count());
  loss_and_gradient(m, pairs, batch, opts, g);
  std::vector<double> theta(m.encoder.values);
  theta.insert(theta.end(), m.decoder.values.begin(), m.decoder.values.end());
  auto loss = [&] {
    std::copy(theta.begin(), theta.begin() + static_cast<long>(m.encoder.size()), m.encoder.values.begin());
    std::copy(theta.begin() + static_cast<long>(m.encoder.size()), theta.end(), m.decoder.values.begin());
    return loss_and_gradient(m, pairs, batch, opts, {}).total;
  };
  const auto rep = nn::finite_diff_check(std::span<double>(theta), g, loss, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Training, DeskScaleLinearRunReducesTheLoss) {
  const auto ds = generate_dataset(make_system(SystemKind::LinearOscillator), Region::disc(3.0), 1000, 100, 0.01, 1);
  // The desk profile's training block at K = 500, N_B = 100, 50 epochs.
  TrainConfig cfg = cli::tuned_training();
  cfg.epochs = 50;
  const auto res = train(ds, cfg);
  EXPECT_LT(res.epoch_mean(cfg.epochs - 1), 0.1 * res.epoch_mean(0));
}
