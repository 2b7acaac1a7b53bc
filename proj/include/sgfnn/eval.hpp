#pragma once

// Ensemble statistics, end-time error metrics, density comparisons, invariant drift,
// latent-variable diagnostics and the symplecticity residual.

#include "sgfnn/distribution.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/systems.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sgfnn {

/// Per-time ensemble moments. Rows index time; columns index state components (p.., q..).
struct EnsembleStats {
  Eigen::VectorXd times;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd stddev;          // divisor n - 1
  Eigen::VectorXd second_moment;   // E[|x|^2] = E[p^2 + q^2]
  long n_traj = 0;

  long size() const { return times.size(); }
  int dim() const { return static_cast<int>(mean.cols() / 2); }
};

inline EnsembleStats ensemble_stats(const Dataset& ens) {
  if (ens.trajectories.empty()) throw std::invalid_argument("ensemble_stats: empty ensemble");
  const long T = ens.trajectories.front().length();
  const long n = ens.n_traj();
  const int D = 2 * ens.dim();
  for (const auto& tr : ens.trajectories)
    if (tr.length() != T || tr.states.rows() != D)
      throw std::invalid_argument("ensemble_stats: trajectories differ in shape");
  EnsembleStats st;
  st.n_traj = n;
  st.times.resize(T);
  for (long j = 0; j < T; ++j) st.times[j] = ens.trajectories.front().t0 + ens.delta * static_cast<double>(j);
  st.mean = Eigen::MatrixXd::Zero(T, D);
  st.stddev = Eigen::MatrixXd::Zero(T, D);
  st.second_moment = Eigen::VectorXd::Zero(T);
  for (const auto& tr : ens.trajectories) {
    st.mean += tr.states.transpose();
    st.second_moment += tr.states.colwise().squaredNorm().transpose();
  }
  st.mean /= static_cast<double>(n);
  st.second_moment /= static_cast<double>(n);
  if (n > 1) {
    for (const auto& tr : ens.trajectories) st.stddev += (tr.states.transpose() - st.mean).array().square().matrix();
    st.stddev = (st.stddev / static_cast<double>(n - 1)).array().sqrt().matrix();
  }
  return st;
}

inline long time_index(const EnsembleStats& st, double T) {
  const double tol = 1e-9 * std::max(1.0, std::abs(T));
  for (long j = 0; j < st.size(); ++j)
    if (std::abs(st.times[j] - T) <= tol) return j;
  throw std::invalid_argument("no recorded state at t = " + std::to_string(T));
}

struct ErrorMetrics {
  double mean_error = 0.0;  // |E x_T - E x~_T|
  double std_error = 0.0;   // |STD x_T - STD x~_T|
};

inline ErrorMetrics error_metrics(const EnsembleStats& predicted, const EnsembleStats& truth, double T) {
  const long jp = time_index(predicted, T), jt = time_index(truth, T);
  if (predicted.mean.cols() != truth.mean.cols()) throw std::invalid_argument("error_metrics: dimension mismatch");
  return {(predicted.mean.row(jp) - truth.mean.row(jt)).norm(),
          (predicted.stddev.row(jp) - truth.stddev.row(jt)).norm()};
}

inline ErrorMetrics error_metrics(const Dataset& predicted, const Dataset& truth, double T) {
  return error_metrics(ensemble_stats(predicted), ensemble_stats(truth), T);
}

/// Least-squares slope of E[|x|^2] against t over t <= t_max.
inline double second_moment_slope(const EnsembleStats& st, double t_max) {
  double st_sum = 0, y_sum = 0, tt = 0, ty = 0;
  long n = 0;
  for (long j = 0; j < st.size(); ++j) {
    if (st.times[j] > t_max + 1e-12) break;
    const double t = st.times[j], y = st.second_moment[j];
    st_sum += t;
    y_sum += y;
    tt += t * t;
    ty += t * y;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("second_moment_slope: need at least two times");
  return (n * ty - st_sum * y_sum) / (n * tt - st_sum * st_sum);
}

/// Samples of every trajectory at time index j: n_traj x 2d.
inline Eigen::MatrixXd samples_at(const Dataset& ens, long j) {
  Eigen::MatrixXd X(ens.n_traj(), 2 * ens.dim());
  for (long i = 0; i < ens.n_traj(); ++i) X.row(i) = ens.trajectories[i].states.col(j).transpose();
  return X;
}

inline Eigen::MatrixXd samples_at_time(const Dataset& ens, double T) {
  if (ens.trajectories.empty()) throw std::invalid_argument("samples_at_time: empty ensemble");
  const double j = (T - ens.trajectories.front().t0) / ens.delta;
  const long k = std::lround(j);
  if (std::abs(j - static_cast<double>(k)) > 1e-6 || k < 0 || k >= ens.trajectories.front().length())
    throw std::invalid_argument("no recorded state at t = " + std::to_string(T));
  return samples_at(ens, k);
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<long> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
};

inline Histogram histogram(const Eigen::Ref<const Eigen::VectorXd>& x, double lo, double hi, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h{lo, hi, std::vector<long>(static_cast<std::size_t>(bins), 0)};
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    long b = static_cast<long>(std::floor((x[i] - lo) / (hi - lo) * bins));
    b = std::clamp<long>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct ComponentDensity {
  double l2_distance = 0.0;
  bool degenerate = false;     // truth or prediction had zero spread
  double center = 0.0;         // standardisation applied before the KDE
  double scale = 1.0;
  Eigen::VectorXd grid;        // standardised coordinates
  Eigen::VectorXd kde_predicted;
  Eigen::VectorXd kde_truth;
  Histogram hist_predicted;
  Histogram hist_truth;
};

/// Per-component KDE comparison after standardising both samples by the truth's mean and
/// std, plus raw-coordinate histograms over the joint sample range.
inline std::vector<ComponentDensity> pdf_compare(const Eigen::Ref<const Eigen::MatrixXd>& predicted,
                                                 const Eigen::Ref<const Eigen::MatrixXd>& truth,
                                                 const KdeOptions& kde = {}, int bins = 50) {
  if (predicted.cols() != truth.cols()) throw std::invalid_argument("pdf_compare: component count differs");
  if (predicted.rows() < 100 || truth.rows() < 100)
    throw std::invalid_argument("pdf_compare: need at least 100 samples per set");
  std::vector<ComponentDensity> out(static_cast<std::size_t>(truth.cols()));
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    auto& cd = out[c];
    const Eigen::VectorXd tp = predicted.col(c), tt = truth.col(c);
    cd.center = tt.mean();
    const double s = sample_std(tt);
    cd.degenerate = !(s > 0.0) || !(sample_std(tp) > 0.0);
    cd.scale = s > 0.0 ? s : 1.0;
    const Eigen::VectorXd zp = (tp.array() - cd.center) / cd.scale;
    const Eigen::VectorXd zt = (tt.array() - cd.center) / cd.scale;
    cd.grid.resize(kde.grid_points);
    for (int g = 0; g < kde.grid_points; ++g) cd.grid[g] = kde.node(g);
    cd.kde_predicted = kde_density(zp, kde, kde_bandwidth(zp, kde));
    cd.kde_truth = kde_density(zt, kde, kde_bandwidth(zt, kde));
    cd.l2_distance = std::sqrt((cd.kde_predicted - cd.kde_truth).squaredNorm() * kde.spacing());
    const double lo = std::min(tp.minCoeff(), tt.minCoeff()), hi = std::max(tp.maxCoeff(), tt.maxCoeff());
    cd.hist_predicted = histogram(tp, lo, hi, bins);
    cd.hist_truth = histogram(tt, lo, hi, bins);
  }
  return out;
}

/// Max-abs entry of D^T J D - J, with D the central-difference Jacobian of `map` at x.
template <class Map>
double symplecticity_residual(Map&& map, const Eigen::Ref<const Eigen::VectorXd>& x, double h = 1e-6) {
  const auto n = x.size();
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("symplecticity_residual: state length must be 2d");
  const auto d = n / 2;
  Eigen::MatrixXd D(n, n);
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Eigen::VectorXd fp = map(xp), fm = map(xm);
    D.col(j) = (fp - fm) / (2.0 * h);
    xp[j] = xm[j] = x[j];
  }
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  J.topRightCorner(d, d).setIdentity();
  J.bottomLeftCorner(d, d) = -Eigen::MatrixXd::Identity(d, d);
  return (D.transpose() * J * D - J).cwiseAbs().maxCoeff();
}

struct InvariantDrift {
  double max_drift = 0.0;
  Eigen::VectorXd mean_drift;  // ensemble mean of |I(x_t) - I(x_0)| per time
};

inline InvariantDrift invariant_drift(const Dataset& ens, const SystemSpec& spec) {
  if (!has_invariant(spec))
    throw std::invalid_argument("no tracked invariant for system '" + std::string(system_name(spec.kind)) + "'");
  if (ens.trajectories.empty()) throw std::invalid_argument("invariant_drift: empty ensemble");
  InvariantDrift out;
  const long T = ens.trajectories.front().length();
  out.mean_drift = Eigen::VectorXd::Zero(T);
  for (const auto& tr : ens.trajectories) {
    const Eigen::VectorXd inv = tr.states.colwise().squaredNorm().transpose();
    const Eigen::VectorXd drift = (inv.array() - inv[0]).abs();
    out.mean_drift += drift;
    out.max_drift = std::max(out.max_drift, drift.maxCoeff());
  }
  out.mean_drift /= static_cast<double>(ens.n_traj());
  return out;
}

struct LatentDimensionReport {
  double mean = 0.0;
  double stddev = 0.0;
  std::array<double, 6> central_moments{};
  double excess_kurtosis = 0.0;  // NaN for constant samples
  double kde_distance = 0.0;     // L2 distance of the KDE to N(0,1)
  Histogram hist;
};

struct LatentReport {
  std::vector<LatentDimensionReport> dims;
  std::vector<std::pair<std::pair<int, int>, double>> correlations;  // ((j, k), rho_jk), j < k
  double max_abs_correlation() const {
    double m = 0.0;
    for (const auto& c : correlations) m = std::max(m, std::abs(c.second));
    return m;
  }
};

inline LatentReport latent_report(const Eigen::Ref<const Eigen::MatrixXd>& z, const KdeOptions& kde = {},
                                  int bins = 50) {
  if (z.rows() < 2) throw std::invalid_argument("latent_report: need at least 2 samples");
  LatentReport rep;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    const Eigen::VectorXd col = z.col(k);
    LatentDimensionReport r;
    r.mean = col.mean();
    r.stddev = sample_std(col);
    r.central_moments = central_moments(col);
    const double m2 = r.central_moments[1];
    r.excess_kurtosis = m2 > 0.0 ? r.central_moments[3] / (m2 * m2) - 3.0 : std::numeric_limits<double>::quiet_NaN();
    r.kde_distance = kde_normal_distance(col, kde);
    r.hist = histogram(col, kde.grid_min, kde.grid_max, bins);
    rep.dims.push_back(std::move(r));
  }
  for (int j = 0; j < z.cols(); ++j)
    for (int k = j + 1; k < z.cols(); ++k) rep.correlations.push_back({{j, k}, pearson(z.col(j), z.col(k))});
  return rep;
}

}  // namespace sgfnn
