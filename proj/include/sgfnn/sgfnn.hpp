#pragma once

// Stochastic generating function network. The decoder learns S(p1, q0, z); a transition
// is generated implicitly by
//   p1 = p0 - dS/dq0(p1, q0, z),   q1 = q0 + dS/dp1(p1, q0, z),
// which is symplectic for any S.

#include "sgfnn/model.hpp"
#include "sgfnn/training.hpp"

#include <Eigen/Dense>

#include <span>
#include <stdexcept>

namespace sgfnn {

struct GeneratingFunctionValue {
  double S = 0.0;
  Eigen::VectorXd dS_dp1;
  Eigen::VectorXd dS_dq0;
};

inline GeneratingFunctionValue decode_S(const SgfnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& p1,
                                        const Eigen::Ref<const Eigen::VectorXd>& q0,
                                        const Eigen::Ref<const Eigen::VectorXd>& z) {
  const int d = model.dim;
  if (p1.size() != d || q0.size() != d || z.size() != model.latent_dim)
    throw std::invalid_argument("decode_S: expected p1, q0 of length d and z of length n_z");
  Eigen::VectorXd in(2 * d + model.latent_dim);
  in << p1, q0, z;
  nn::MlpWorkspace ws;
  GeneratingFunctionValue out;
  const double c = model.output_scale;
  out.S = c * nn::forward(model.decoder, in, ws)[0];
  const auto& g = nn::input_gradient(model.decoder, ws);
  out.dS_dp1 = c * g.head(d);
  out.dS_dq0 = c * g.segment(d, d);
  return out;
}

/// Squared residual of one pair under the generating relation:
///   |p1 - p0 + dS/dq0|^2 + |q1 - q0 - dS/dp1|^2.
/// With a non-empty `dec_grad`, adds scale * d/dtheta_dec and sets zbar = scale * d/dz.
inline double decoder_pair_loss(const SgfnnModel& model, const PairTable& pairs, long i,
                                const Eigen::Ref<const Eigen::VectorXd>& z, double scale, nn::MlpWorkspace& ws,
                                std::span<double> dec_grad, Eigen::VectorXd& zbar) {
  const int d = model.dim;
  const auto row = pairs.rows.row(i);
  const auto p0 = row.segment(0, d), q0 = row.segment(d, d), p1 = row.segment(2 * d, d), q1 = row.segment(3 * d, d);
  Eigen::VectorXd in(2 * d + model.latent_dim);
  in << p1.transpose(), q0.transpose(), z;
  nn::forward(model.decoder, in, ws);
  const double c = model.output_scale;
  const auto& g = nn::input_gradient(model.decoder, ws);
  const Eigen::VectorXd rp = (p1 - p0).transpose() + c * g.segment(d, d);
  const Eigen::VectorXd rq = (q1 - q0).transpose() - c * g.head(d);
  const double loss = rp.squaredNorm() + rq.squaredNorm();
  if (!dec_grad.empty()) {
    Eigen::VectorXd gadj = Eigen::VectorXd::Zero(in.size());
    gadj.head(d) = -2.0 * c * scale * rq;
    gadj.segment(d, d) = 2.0 * c * scale * rp;
    nn::input_gradient_backward(model.decoder, 0.0, gadj, ws, dec_grad);
    zbar = ws.input_adj.tail(model.latent_dim);
  }
  return loss;
}

/// Mean generating-relation residual over the batch, with z from the encoder.
inline double loss_mse(const SgfnnModel& model, const PairTable& pairs, const Batch& batch) {
  nn::MlpWorkspace enc_ws, dec_ws;
  Eigen::VectorXd in, zbar;
  double acc = 0.0;
  for (long i : batch.indices) {
    pair_encoder_input(model, pairs, i, in);
    const Eigen::VectorXd z = nn::forward(model.encoder, in, enc_ws);
    acc += decoder_pair_loss(model, pairs, i, z, 1.0, dec_ws, {}, zbar);
  }
  return acc / static_cast<double>(batch.indices.size());
}

/// L_MSE + lambda * (L_distance + tau * L_moment).
template <class Model>
double loss_total(const Model& model, const PairTable& pairs, const Batch& batch, double lambda, double tau,
                  const DistributionLossOptions& dist = {}) {
  if (lambda < 0.0 || tau < 0.0) throw std::invalid_argument("loss_total: lambda and tau must be >= 0");
  LossOptions opts{lambda, dist};
  opts.distribution.tau = tau;
  return loss_breakdown(model, pairs, batch, opts).total;
}

/// Latent samples of the batch.
inline Eigen::MatrixXd encode_batch(const LatentModel& model, const PairTable& pairs, const Batch& batch) {
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(batch.indices.size()), model.latent_dim);
  nn::MlpWorkspace ws;
  Eigen::VectorXd in;
  for (std::size_t k = 0; k < batch.indices.size(); ++k) {
    pair_encoder_input(model, pairs, batch.indices[k], in);
    Z.row(static_cast<Eigen::Index>(k)) = nn::forward(model.encoder, in, ws).transpose();
  }
  return Z;
}

inline int resolve_latent_dim(const TrainConfig& cfg, const SystemSpec& system) {
  return cfg.latent_dim > 0 ? cfg.latent_dim : system.r;
}

/// Trains a freshly initialised generating-function model.
inline TrainResult<SgfnnModel> train(const Dataset& dataset, const TrainConfig& cfg) {
  auto model = make_sgfnn_model(dataset.system, resolve_latent_dim(cfg, dataset.system), dataset.delta, cfg.arch,
                                cfg.seed);
  return train_model(std::move(model), dataset, cfg);
}

}  // namespace sgfnn
