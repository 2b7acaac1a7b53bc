#pragma once

// Batch loss, its parameter gradient, and the Adam training loop. Shared by both model
// kinds; each model supplies `decoder_pair_loss` (found by argument-dependent lookup).

#include "sgfnn/distribution.hpp"
#include "sgfnn/model.hpp"
#include "sgfnn/nn.hpp"
#include "sgfnn/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgfnn {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long epoch, long batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  long epoch() const { return epoch_; }
  long batch() const { return batch_; }

 private:
  long epoch_;
  long batch_;
};

struct LossOptions {
  double lambda = 1.0;
  DistributionLossOptions distribution{};
};

struct LossBreakdown {
  double mse = 0.0;
  double distance = 0.0;
  double moment = 0.0;
  double distribution = 0.0;  // distance + tau * moment
  double total = 0.0;         // mse + lambda * distribution
};

struct TrainConfig {
  long K = 500;
  long n_batches = 100;
  int latent_dim = 0;  // 0: use the system's noise channel count
  Architecture arch{};
  LossOptions loss{};
  long epochs = 50;
  nn::AdamConfig adam{};
  double lr_decay = 1.0;     // learning rate multiplier applied once per epoch
  long lr_decay_start = 0;   // first epoch whose rate is decayed
  std::uint64_t seed = 0;
  bool recompute_batches = false;
  int workers = 1;
};

struct LossRecord {
  long epoch = 0;
  long batch = 0;
  LossBreakdown loss;
};

template <class Model>
struct TrainResult {
  Model model;
  std::vector<LossRecord> history;

  /// Mean total loss over the batches of one epoch.
  double epoch_mean(long epoch) const {
    double s = 0.0;
    long n = 0;
    for (const auto& r : history)
      if (r.epoch == epoch) {
        s += r.loss.total;
        ++n;
      }
    return n ? s / n : 0.0;
  }
};

inline constexpr long kPairChunk = 64;

/// Encoder input of pair i.
inline void pair_encoder_input(const LatentModel& model, const PairTable& pairs, long i, Eigen::VectorXd& in) {
  model.encoder_features(pairs.x0(i).transpose(), pairs.x1(i).transpose(), in);
}

/// Loss of `model` on the batch; when `grad` is non-empty it receives d total / d theta
/// laid out as [encoder | decoder]. Per-pair work runs in fixed chunks reduced in order.
template <class Model>
LossBreakdown loss_and_gradient(const Model& model, const PairTable& pairs, std::span<const long> batch,
                                const LossOptions& opts, std::span<double> grad, int workers = 1) {
  const long K = static_cast<long>(batch.size());
  if (K < 2) throw std::invalid_argument("loss: a batch needs at least 2 pairs");
  if (pairs.dim != model.dim) throw std::invalid_argument("loss: pair dimension does not match the model");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != model.parameter_count())
    throw std::invalid_argument("loss: gradient buffer has the wrong size");

  const long n_chunks = (K + kPairChunk - 1) / kPairChunk;
  Eigen::MatrixXd Z(K, model.latent_dim);
  parallel_for(static_cast<std::size_t>(n_chunks), workers, [&](std::size_t c) {
    nn::MlpWorkspace ws;
    Eigen::VectorXd in;
    const long hi = std::min<long>(K, (static_cast<long>(c) + 1) * kPairChunk);
    for (long k = static_cast<long>(c) * kPairChunk; k < hi; ++k) {
      pair_encoder_input(model, pairs, batch[k], in);
      Z.row(k) = nn::forward(model.encoder, in, ws).transpose();
    }
  });

  const DistributionLoss dist = loss_distribution(Z, opts.distribution, want_grad);

  const std::size_t n_enc = model.encoder.size();
  std::vector<std::vector<double>> chunk_grad(want_grad ? n_chunks : 0);
  std::vector<double> chunk_loss(static_cast<std::size_t>(n_chunks), 0.0);
  const double scale = 1.0 / static_cast<double>(K);
  parallel_for(static_cast<std::size_t>(n_chunks), workers, [&](std::size_t c) {
    nn::MlpWorkspace enc_ws, dec_ws;
    Eigen::VectorXd in, zbar;
    std::span<double> g_enc, g_dec;
    if (want_grad) {
      chunk_grad[c].assign(model.parameter_count(), 0.0);
      g_enc = std::span<double>(chunk_grad[c]).first(n_enc);
      g_dec = std::span<double>(chunk_grad[c]).subspan(n_enc);
    }
    double acc = 0.0;
    const long hi = std::min<long>(K, (static_cast<long>(c) + 1) * kPairChunk);
    for (long k = static_cast<long>(c) * kPairChunk; k < hi; ++k) {
      const long i = batch[k];
      acc += decoder_pair_loss(model, pairs, i, Z.row(k).transpose(), scale, dec_ws, g_dec, zbar);
      if (!want_grad) continue;
      zbar += opts.lambda * dist.grad.row(k).transpose();
      pair_encoder_input(model, pairs, i, in);
      nn::forward(model.encoder, in, enc_ws);
      nn::backward(model.encoder, zbar, enc_ws, g_enc);
    }
    chunk_loss[c] = acc;
  });

  LossBreakdown out;
  for (double v : chunk_loss) out.mse += v;
  out.mse *= scale;
  out.distance = dist.distance;
  out.moment = dist.moment;
  out.distribution = dist.total;
  out.total = out.mse + opts.lambda * dist.total;
  if (want_grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& g : chunk_grad)
      for (std::size_t j = 0; j < g.size(); ++j) grad[j] += g[j];
  }
  return out;
}

template <class Model>
LossBreakdown loss_breakdown(const Model& model, const PairTable& pairs, const Batch& batch,
                             const LossOptions& opts, int workers = 1) {
  return loss_and_gradient(model, pairs, batch.indices, opts, {}, workers);
}

/// Adam on the batch loss, one update per batch, N_B batches per epoch. `model` is the
/// starting point.
template <class Model>
TrainResult<Model> train_model(Model model, const Dataset& dataset, const TrainConfig& cfg) {
  if (dataset.n_traj() < 1 || dataset.n_steps() < 1) throw std::invalid_argument("train: empty dataset");
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.loss.lambda < 0.0 || cfg.loss.distribution.tau < 0.0)
    throw std::invalid_argument("train: lambda and tau must be >= 0");
  const PairTable pairs = PairTable::from_dataset(dataset);
  std::vector<Batch> batches = make_batches(pairs, cfg.K, cfg.n_batches, derive_seed(cfg.seed, Stream::Batches, 0));

  TrainResult<Model> result;
  nn::AdamState adam(model.parameter_count(), cfg.adam);
  std::vector<double> grad(model.parameter_count());
  result.history.reserve(static_cast<std::size_t>(cfg.epochs * cfg.n_batches));
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.recompute_batches && epoch > 0)
      batches = make_batches(pairs, cfg.K, cfg.n_batches,
                             derive_seed(cfg.seed, Stream::Batches, static_cast<std::uint64_t>(epoch)));
    const long decayed = std::max(0L, epoch - cfg.lr_decay_start + 1);
    adam.config.learning_rate = cfg.adam.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(decayed));
    for (long b = 0; b < static_cast<long>(batches.size()); ++b) {
      const LossBreakdown loss = loss_and_gradient(model, pairs, batches[b].indices, cfg.loss, grad, cfg.workers);
      bool finite = std::isfinite(loss.total);
      for (double g : grad) finite = finite && std::isfinite(g);
      if (!finite)
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b),
                            epoch, b);
      result.history.push_back({epoch, b, loss});
      nn::adam_step(adam, {std::span<double>(model.encoder.values), std::span<double>(model.decoder.values)}, grad);
    }
  }
  result.model = std::move(model);
  return result;
}

/// Latent samples z = E(x0, x1) for every pair in `pairs` (K x n_z).
inline Eigen::MatrixXd encode_pairs(const LatentModel& model, const PairTable& pairs) {
  Eigen::MatrixXd Z(pairs.size(), model.latent_dim);
  nn::MlpWorkspace ws;
  Eigen::VectorXd in;
  for (long i = 0; i < pairs.size(); ++i) {
    pair_encoder_input(model, pairs, i, in);
    Z.row(i) = nn::forward(model.encoder, in, ws).transpose();
  }
  return Z;
}

}  // namespace sgfnn
