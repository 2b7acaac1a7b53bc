#pragma once

// Distribution loss pulling latent samples towards a standard normal:
//   L_D = sum_dims ||KDE(z_dim) - N(0,1)||_2 + tau * L_moment
//   L_moment = sum_{j=1..6} ||mu_j(z) - mu_j(N)||^2 / c_j + (nu / V) sum_{j<k} rho_jk^2
// with analytic gradients w.r.t. every sample.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sgfnn {

inline constexpr std::array<double, 6> kNormalCentralMoments{0.0, 1.0, 0.0, 3.0, 0.0, 15.0};
inline constexpr std::array<double, 6> kMomentWeights{1.0, 1.0, 2.0, 3.0, 8.0, 15.0};

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

struct KdeOptions {
  int grid_points = 101;
  double grid_min = -5.0;
  double grid_max = 5.0;
  double bandwidth_factor = 1.06;  // h = factor * std * K^(-1/5)
  double min_bandwidth = 1e-3;
  // Compare against N(0, 1 + h^2), the expected KDE of standard-normal samples, instead of
  // N(0, 1). Removes the pull towards std sqrt(1 - h^2) that the plain target has.
  bool smooth_target = false;

  double spacing() const { return (grid_max - grid_min) / (grid_points - 1); }
  double node(int g) const { return grid_min + g * spacing(); }
};

struct DistributionLossOptions {
  double tau = 1.0;
  double nu = 0.1;
  // The first central moment is identically zero. When set, the j = 1 term uses the
  // sample mean instead, which pins the batch mean at 0.
  bool mean_as_first_moment = false;
  // Extra multiplier on the j = 1 term only. Lets the mean be held tightly without also
  // stiffening the higher moments, whose small-batch noise favours light tails.
  double first_moment_weight = 1.0;
  KdeOptions kde{};
};

struct DistributionLoss {
  double distance = 0.0;  // summed over dimensions
  double moment = 0.0;    // includes the correlation term
  double total = 0.0;     // distance + tau * moment
  Eigen::MatrixXd grad;   // d total / d z, K x n_z (empty unless requested)
};

inline double sample_mean(const Eigen::Ref<const Eigen::VectorXd>& z) { return z.mean(); }

/// Sample standard deviation with divisor n-1.
inline double sample_std(const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() < 2) return 0.0;
  const double m = z.mean();
  return std::sqrt((z.array() - m).square().sum() / static_cast<double>(z.size() - 1));
}

/// Central moments 1..6 with divisor n.
inline std::array<double, 6> central_moments(const Eigen::Ref<const Eigen::VectorXd>& z) {
  std::array<double, 6> mu{};
  const double m = z.mean();
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double c = z[i] - m;
    double pw = 1.0;
    for (int j = 0; j < 6; ++j) {
      pw *= c;
      mu[j] += pw;
    }
  }
  for (double& v : mu) v /= static_cast<double>(z.size());
  return mu;
}

/// Pearson correlation; 0 if either column is constant.
inline double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::ArrayXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  const double A = ca.square().sum(), B = cb.square().sum();
  if (A <= 0.0 || B <= 0.0) return 0.0;
  return (ca * cb).sum() / std::sqrt(A * B);
}

inline double kde_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& z, const KdeOptions& opts) {
  const double raw = opts.bandwidth_factor * sample_std(z) * std::pow(static_cast<double>(z.size()), -0.2);
  return std::max(raw, opts.min_bandwidth);
}

/// Gaussian-kernel density of `z` evaluated on the option grid.
inline Eigen::VectorXd kde_density(const Eigen::Ref<const Eigen::VectorXd>& z, const KdeOptions& opts,
                                   double bandwidth) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(opts.grid_points);
  const double norm = 1.0 / (static_cast<double>(z.size()) * bandwidth);
  for (int g = 0; g < opts.grid_points; ++g) {
    const double y = opts.node(g);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) acc += normal_pdf((y - z[i]) / bandwidth);
    f[g] = norm * acc;
  }
  return f;
}

/// Discrete L2 distance sqrt(sum_g (fhat_g - phi_g)^2 * dy) between the KDE of `z` and the
/// standard normal density. Adds d/dz into `grad` (scaled by `scale`) when grad is non-null.
inline double kde_normal_distance(const Eigen::Ref<const Eigen::VectorXd>& z, const KdeOptions& opts,
                                  Eigen::Ref<Eigen::VectorXd>* grad = nullptr, double scale = 1.0) {
  const auto K = z.size();
  const double Kd = static_cast<double>(K);
  const double dy = opts.spacing();
  const double s = sample_std(z);
  const double raw_h = opts.bandwidth_factor * s * std::pow(Kd, -0.2);
  const bool floored = raw_h < opts.min_bandwidth;
  const double h = floored ? opts.min_bandwidth : raw_h;
  const double inv_h = 1.0 / h;
  const double st = opts.smooth_target ? std::sqrt(1.0 + h * h) : 1.0;
  auto target = [&](double y) { return normal_pdf(y / st) / st; };

  // phi(u_gi) is needed twice; keep it G x K.
  Eigen::MatrixXd kern(opts.grid_points, K);
  Eigen::VectorXd fhat(opts.grid_points), r(opts.grid_points);
  for (int g = 0; g < opts.grid_points; ++g) {
    const double y = opts.node(g);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      const double k = normal_pdf((y - z[i]) * inv_h);
      kern(g, i) = k;
      acc += k;
    }
    fhat[g] = acc * inv_h / Kd;
    r[g] = fhat[g] - target(y);
  }
  const double D = std::sqrt(r.squaredNorm() * dy);
  if (grad == nullptr || D == 0.0) return D;

  const Eigen::VectorXd w = r * (dy / D);  // dD/dfhat_g
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(K);
  double dh = 0.0;
  const double c = inv_h * inv_h / Kd;
  for (int g = 0; g < opts.grid_points; ++g) {
    const double y = opts.node(g);
    double second = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      const double u = (y - z[i]) * inv_h;
      const double uk = u * kern(g, i);
      dz[i] += w[g] * c * uk;
      second += u * uk;
    }
    dh += w[g] * (-fhat[g] * inv_h + c * second);
    if (opts.smooth_target) {
      const double v = y / st;
      dh -= w[g] * target(y) * (v * v - 1.0) / st * (h / st);
    }
  }
  if (!floored && s > 0.0) {
    const double m = z.mean();
    const double dh_ds = opts.bandwidth_factor * std::pow(Kd, -0.2);
    for (Eigen::Index i = 0; i < K; ++i) dz[i] += dh * dh_ds * (z[i] - m) / ((Kd - 1.0) * s);
  }
  *grad += scale * dz;
  return D;
}

/// Distribution loss of a K x n_z latent batch.
inline DistributionLoss loss_distribution(const Eigen::Ref<const Eigen::MatrixXd>& z,
                                          const DistributionLossOptions& opts, bool want_grad = false) {
  const auto K = z.rows();
  const auto nz = z.cols();
  if (K < 2) throw std::invalid_argument("loss_distribution: need at least 2 samples");
  if (nz < 1) throw std::invalid_argument("loss_distribution: latent dimension must be >= 1");
  const double Kd = static_cast<double>(K);
  DistributionLoss out;
  if (want_grad) out.grad = Eigen::MatrixXd::Zero(K, nz);

  // Moment sums are accumulated per dimension; the gradient w.r.t. the dimension's
  // moment term is scaled by tau.
  for (Eigen::Index k = 0; k < nz; ++k) {
    const Eigen::VectorXd col = z.col(k);
    Eigen::VectorXd dcol;
    if (want_grad) {
      dcol = Eigen::VectorXd::Zero(K);
      Eigen::Ref<Eigen::VectorXd> ref(dcol);
      out.distance += kde_normal_distance(col, opts.kde, &ref, 1.0);
    } else {
      out.distance += kde_normal_distance(col, opts.kde);
    }

    const auto mu = central_moments(col);
    const double first = opts.mean_as_first_moment ? col.mean() : mu[0];
    std::array<double, 6> coef{};
    for (int j = 0; j < 6; ++j) {
      const double diff = (j == 0 ? first : mu[j]) - kNormalCentralMoments[j];
      const double wj = (j == 0 ? opts.first_moment_weight : 1.0) / kMomentWeights[j];
      out.moment += diff * diff * wj;
      coef[j] = 2.0 * diff * wj;
    }
    if (want_grad) {
      // d mu_j / d z_i = (j/K) (c_i^{j-1} - mu_{j-1}), mu_0 = 1.
      const double m = col.mean();
      for (Eigen::Index i = 0; i < K; ++i) {
        const double c = col[i] - m;
        double pw = 1.0;  // c^{j-1}
        double acc = 0.0;
        for (int j = 1; j <= 6; ++j) {
          const double prev_mu = j == 1 ? 1.0 : mu[j - 2];
          acc += coef[j - 1] * (j / Kd) * (pw - prev_mu);
          pw *= c;
        }
        if (opts.mean_as_first_moment) acc += coef[0] / Kd;
        dcol[i] += opts.tau * acc;
      }
      out.grad.col(k) += dcol;
    }
  }

  if (nz > 1) {
    const double V = static_cast<double>(nz * (nz - 1)) / 2.0;
    const Eigen::MatrixXd centered = z.rowwise() - z.colwise().mean();
    const Eigen::VectorXd ss = centered.colwise().squaredNorm();
    for (Eigen::Index j = 0; j < nz; ++j) {
      for (Eigen::Index l = j + 1; l < nz; ++l) {
        if (ss[j] <= 0.0 || ss[l] <= 0.0) continue;
        const double root = std::sqrt(ss[j] * ss[l]);
        const double rho = centered.col(j).dot(centered.col(l)) / root;
        out.moment += opts.nu / V * rho * rho;
        if (want_grad) {
          const double c = opts.tau * opts.nu / V * 2.0 * rho;
          out.grad.col(j) += c * (centered.col(l) / root - rho * centered.col(j) / ss[j]);
          out.grad.col(l) += c * (centered.col(j) / root - rho * centered.col(l) / ss[l]);
        }
      }
    }
  }
  out.total = out.distance + opts.tau * out.moment;
  return out;
}

}  // namespace sgfnn
