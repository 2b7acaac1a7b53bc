#pragma once

// Flow-map baseline: the decoder maps (x0, z) straight to x1. Same encoder, distribution
// loss, batching and training loop as the generating-function model.

#include "sgfnn/model.hpp"
#include "sgfnn/sgfnn.hpp"
#include "sgfnn/training.hpp"

#include <Eigen/Dense>

#include <span>
#include <stdexcept>

namespace sgfnn {

/// |x1 - G(x0, z)|^2 for one pair.
inline double decoder_pair_loss(const SfmlModel& model, const PairTable& pairs, long i,
                                const Eigen::Ref<const Eigen::VectorXd>& z, double scale, nn::MlpWorkspace& ws,
                                std::span<double> dec_grad, Eigen::VectorXd& zbar) {
  const int d = model.dim;
  Eigen::VectorXd in(2 * d + model.latent_dim);
  in << pairs.x0(i).transpose(), z;
  const Eigen::VectorXd res = pairs.x1(i).transpose() - nn::forward(model.decoder, in, ws);
  if (!dec_grad.empty()) {
    nn::backward(model.decoder, -2.0 * scale * res, ws, dec_grad);
    zbar = ws.input_adj.tail(model.latent_dim);
  }
  return res.squaredNorm();
}

inline Eigen::VectorXd sfml_step(const SfmlModel& model, const Eigen::Ref<const Eigen::VectorXd>& x0,
                                 const Eigen::Ref<const Eigen::VectorXd>& omega, nn::MlpWorkspace& ws) {
  if (x0.size() != 2 * model.dim || omega.size() != model.latent_dim)
    throw std::invalid_argument("sfml_step: expected x0 of length 2d and omega of length n_z");
  Eigen::VectorXd in(2 * model.dim + model.latent_dim);
  in << x0, omega;
  return nn::forward(model.decoder, in, ws);
}

inline PhaseState sfml_step(const SfmlModel& model, const PhaseState& x0, const Eigen::VectorXd& omega) {
  nn::MlpWorkspace ws;
  return PhaseState(sfml_step(model, x0.x, omega, ws));
}

inline TrainResult<SfmlModel> train_sfml(const Dataset& dataset, const TrainConfig& cfg) {
  auto model = make_sfml_model(dataset.system, resolve_latent_dim(cfg, dataset.system), dataset.delta, cfg.arch,
                               cfg.seed);
  return train_model(std::move(model), dataset, cfg);
}

}  // namespace sgfnn
