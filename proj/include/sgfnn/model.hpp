#pragma once

// Pieces shared by the generating-function model and the flow-map baseline: the
// autoencoder container, the encoder, the pair table and nearest-neighbour batching.

#include "sgfnn/nn.hpp"
#include "sgfnn/rng.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/systems.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sgfnn {

/// How the encoder sees a pair. Increment feeds (x0, (x1 - x0)/delta), an invertible
/// affine reparametrisation of (x0, x1) that puts the noise-carrying part at unit scale.
enum class EncoderInput { Raw, Increment };

inline std::string_view encoder_input_name(EncoderInput e) { return e == EncoderInput::Raw ? "raw" : "increment"; }
inline EncoderInput parse_encoder_input(std::string_view s) {
  if (s == "raw") return EncoderInput::Raw;
  if (s == "increment") return EncoderInput::Increment;
  throw std::invalid_argument("unknown encoder input '" + std::string(s) + "'");
}

/// Encoder E(x0, x1) -> z of size n_z plus a decoder whose meaning depends on the model.
struct LatentModel {
  nn::MlpParams encoder;
  nn::MlpParams decoder;
  int dim = 1;         // d
  int latent_dim = 1;  // n_z
  double delta = 0.01;
  EncoderInput encoder_input = EncoderInput::Raw;
  double output_scale = 1.0;  // generating function S = output_scale * decoder output
  SystemSpec system;

  /// Writes the encoder input for the pair (x0, x1) into `in` (length 4d).
  template <class A, class B>
  void encoder_features(const A& x0, const B& x1, Eigen::VectorXd& in) const {
    const int n = 2 * dim;
    in.resize(2 * n);
    in.head(n) = x0;
    if (encoder_input == EncoderInput::Raw)
      in.tail(n) = x1;
    else
      in.tail(n) = (x1 - x0) / delta;
  }

  std::size_t parameter_count() const { return encoder.size() + decoder.size(); }
  bool operator==(const LatentModel& o) const {
    return encoder == o.encoder && decoder == o.decoder && dim == o.dim && latent_dim == o.latent_dim &&
           delta == o.delta && encoder_input == o.encoder_input &&
           output_scale == o.output_scale;
  }
};

/// Decoder approximates the generating function S(p1, q0, z); scalar output.
struct SgfnnModel : LatentModel {
  static constexpr const char* kind_name = "sgfnn";
};

/// Decoder outputs the next state directly: x1 = G(x0, z).
struct SfmlModel : LatentModel {
  static constexpr const char* kind_name = "sfml";
};

struct Architecture {
  std::vector<int> encoder_hidden{20, 20, 20};
  std::vector<int> decoder_hidden{20, 20, 20};
  double elu_alpha = 1.0;
  EncoderInput encoder_input = EncoderInput::Raw;
  bool scale_by_delta = false;  // generating-function models only: S = delta * decoder output
};

namespace detail {
template <class Model>
Model make_latent_model(const SystemSpec& system, int latent_dim, double delta, const Architecture& arch,
                        std::uint64_t seed, int decoder_out) {
  if (latent_dim < 1) throw std::invalid_argument("latent dimension must be >= 1");
  Model m;
  m.dim = system.d;
  m.latent_dim = latent_dim;
  m.delta = delta;
  m.system = system;
  m.encoder_input = arch.encoder_input;
  if (arch.scale_by_delta && decoder_out == 1) m.output_scale = delta;
  const int d = system.d;
  m.encoder = nn::make_mlp(nn::mlp_shape(4 * d, arch.encoder_hidden, latent_dim),
                           derive_seed(seed, Stream::Init, 0), arch.elu_alpha);
  m.decoder = nn::make_mlp(nn::mlp_shape(2 * d + latent_dim, arch.decoder_hidden, decoder_out),
                           derive_seed(seed, Stream::Init, 1), arch.elu_alpha);
  return m;
}
}  // namespace detail

inline SgfnnModel make_sgfnn_model(const SystemSpec& system, int latent_dim, double delta,
                                   const Architecture& arch = {}, std::uint64_t seed = 0) {
  return detail::make_latent_model<SgfnnModel>(system, latent_dim, delta, arch, seed, 1);
}

inline SfmlModel make_sfml_model(const SystemSpec& system, int latent_dim, double delta,
                                 const Architecture& arch = {}, std::uint64_t seed = 0) {
  return detail::make_latent_model<SfmlModel>(system, latent_dim, delta, arch, seed, 2 * system.d);
}

/// z = E(x0, x1) on the concatenation (p0, q0, p1, q1).
inline Eigen::VectorXd encode(const LatentModel& model, const PhaseState& x0, const PhaseState& x1) {
  if (x0.dim() != model.dim || x1.dim() != model.dim)
    throw std::invalid_argument("encode: state dimension does not match the model");
  Eigen::VectorXd in;
  model.encoder_features(x0.x, x1.x, in);
  return nn::mlp_forward(model.encoder, in);
}

/// All M = N*L transition pairs, row i = (p0, q0, p1, q1). Row index = traj * L + step.
struct PairTable {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMatrix rows;
  int dim = 1;

  long size() const { return rows.rows(); }
  auto x0(long i) const { return rows.row(i).head(2 * dim); }
  auto x1(long i) const { return rows.row(i).tail(2 * dim); }

  static PairTable from_dataset(const Dataset& ds) {
    PairTable t;
    t.dim = ds.dim();
    const long L = ds.n_steps();
    t.rows.resize(ds.n_traj() * L, 4 * t.dim);
    long i = 0;
    for (const auto& traj : ds.trajectories) {
      if (traj.length() != L + 1) throw std::invalid_argument("dataset trajectories differ in length");
      for (long s = 0; s < L; ++s, ++i) {
        t.rows.row(i).head(2 * t.dim) = traj.states.col(s).transpose();
        t.rows.row(i).tail(2 * t.dim) = traj.states.col(s + 1).transpose();
      }
    }
    return t;
  }
};

/// K pair indices nearest (in x0) to the x0 of pair `seed_index`.
struct Batch {
  std::vector<long> indices;  // ascending
  long seed_index = 0;
};

/// Indices of the K pairs whose x0 are nearest to `point`; ties go to the smaller index.
inline std::vector<long> nearest_pairs(const PairTable& pairs, const Eigen::Ref<const Eigen::VectorXd>& point,
                                       long K) {
  const long M = pairs.size();
  if (K < 1 || K > M) throw std::invalid_argument("nearest_pairs: need 1 <= K <= M");
  std::vector<double> dist(static_cast<std::size_t>(M));
  for (long i = 0; i < M; ++i) dist[i] = (pairs.x0(i).transpose() - point).squaredNorm();
  std::vector<long> idx(static_cast<std::size_t>(M));
  std::iota(idx.begin(), idx.end(), 0L);
  auto closer = [&](long a, long b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
  if (K < M) std::nth_element(idx.begin(), idx.begin() + K, idx.end(), closer);
  idx.resize(static_cast<std::size_t>(K));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// N_B batches; each centred on a uniformly drawn pair.
inline std::vector<Batch> make_batches(const PairTable& pairs, long K, long n_batches, std::uint64_t seed) {
  const long M = pairs.size();
  if (K > M) throw std::invalid_argument("make_batches: K = " + std::to_string(K) + " exceeds M = " +
                                         std::to_string(M));
  if (K < 1 || n_batches < 1) throw std::invalid_argument("make_batches: K and N_B must be >= 1");
  std::vector<Batch> out(static_cast<std::size_t>(n_batches));
  for (long b = 0; b < n_batches; ++b) {
    auto engine = make_engine(seed, Stream::Batches, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<long> pick(0, M - 1);
    out[b].seed_index = pick(engine);
    out[b].indices = nearest_pairs(pairs, pairs.x0(out[b].seed_index).transpose(), K);
  }
  return out;
}

}  // namespace sgfnn
