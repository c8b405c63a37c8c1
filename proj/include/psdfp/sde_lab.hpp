#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>

#include "psdfp/common.hpp"
#include "psdfp/drift.hpp"
#include "psdfp/fpe_assembly.hpp"
#include "psdfp/psd_model.hpp"
#include "psdfp/quadrature.hpp"
#include "psdfp/rng.hpp"

namespace psdfp {

enum class NoiseKind { kBrownian, kStable };

/// SDE instance: drift (linear or RKHS expansion), Brownian or alpha-stable
/// noise, initial density, spatial box and time horizon.
struct SdeProblem {
  int dim = 1;
  // Drift: exactly one of the two.
  std::optional<VectorXd> linear_theta;  // mu(x, t) = -theta .* x
  std::optional<RkhsDrift> rkhs_drift;   // centers live in space-time

  NoiseKind noise = NoiseKind::kBrownian;
  MatrixXd diffusion;  // d x d, Brownian only
  double alpha = 2.0;  // stable only

  GaussianMixture p0;
  Box space_box;  // d axes
  double horizon = 1.0;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("SdeProblem: dim >= 1 required");
    if (linear_theta.has_value() == rkhs_drift.has_value())
      throw std::invalid_argument("SdeProblem: exactly one drift form required");
    if (linear_theta && linear_theta->size() != dim)
      throw std::invalid_argument("SdeProblem: theta dimension mismatch");
    if (noise == NoiseKind::kBrownian) {
      if (diffusion.rows() != dim || diffusion.cols() != dim)
        throw std::invalid_argument("SdeProblem: diffusion must be d x d");
    } else if (!(alpha > 0.0 && alpha <= 2.0)) {
      throw std::invalid_argument("SdeProblem: alpha in (0, 2] required");
    }
    p0.validate();
    if (p0.dim() != dim || space_box.dim() != dim)
      throw std::invalid_argument("SdeProblem: p0/box dimension mismatch");
    if (!(horizon > 0.0)) throw std::invalid_argument("SdeProblem: horizon must be positive");
  }

  VectorXd drift_at(const VectorXd& x, double t) const {
    if (linear_theta) return -linear_theta->cwiseProduct(x);
    VectorXd z(dim + 1);
    z.head(dim) = x;
    z[dim] = t;
    return rkhs_drift->value(z);
  }
};

// ---------------------------------------------------------------------------
// Alpha-stable draws.

/// Standard symmetric alpha-stable draw with characteristic function
/// exp(-|u|^alpha) (Chambers-Mallows-Stuck). alpha = 2 reduces to sqrt(2) N(0,1).
inline double stable_symmetric_draw(Rng& rng, double alpha) {
  if (alpha == 2.0) return M_SQRT2 * rng.normal();
  double v = M_PI * (rng.uniform() - 0.5);
  if (alpha == 1.0) return std::tan(v);
  double w = rng.exponential();
  double cv = std::cos(v);
  return std::sin(alpha * v) / std::pow(cv, 1.0 / alpha) *
         std::pow(std::cos((1.0 - alpha) * v) / w, (1.0 - alpha) / alpha);
}

/// Positive strictly stable draw with Laplace transform exp(-lambda^rho),
/// rho in (0, 1) (Kanter's representation).
inline double stable_positive_draw(Rng& rng, double rho) {
  double u = M_PI * rng.uniform();
  while (u <= 0.0 || u >= M_PI) u = M_PI * rng.uniform();
  double w = rng.exponential();
  double a = std::pow(std::sin(rho * u), rho / (1.0 - rho)) * std::sin((1.0 - rho) * u) /
             std::pow(std::sin(u), 1.0 / (1.0 - rho));
  return std::pow(a / w, (1.0 - rho) / rho);
}

/// Rotationally invariant alpha-stable vector with characteristic function
/// exp(-||u||^alpha): subordinated Gaussian sqrt(2 S) N(0, I) for d > 1.
inline VectorXd stable_isotropic_draw(Rng& rng, double alpha, int dim) {
  VectorXd z(dim);
  if (dim == 1) {
    z[0] = stable_symmetric_draw(rng, alpha);
    return z;
  }
  double scale = alpha == 2.0 ? 1.0 : std::sqrt(2.0 * stable_positive_draw(rng, 0.5 * alpha));
  for (int a = 0; a < dim; ++a) z[a] = rng.normal();
  return (alpha == 2.0 ? M_SQRT2 : scale) * z;
}

/// Batch of one-dimensional symmetric alpha-stable draws.
inline VectorXd stable_step_sampler(double alpha, int size, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw std::invalid_argument("stable_step_sampler: alpha in (0, 2] required");
  Rng rng(seed);
  VectorXd out(size);
  for (int k = 0; k < size; ++k) out[k] = stable_symmetric_draw(rng, alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Path simulation. Requested times are snapped to the step grid.

inline VectorXd sample_mixture(const GaussianMixture& p0, Rng& rng) {
  double u = rng.uniform(), acc = 0.0;
  int pick = p0.components() - 1;
  for (int k = 0; k < p0.components(); ++k) {
    acc += p0.weights[k];
    if (u < acc) {
      pick = k;
      break;
    }
  }
  VectorXd x(p0.dim());
  for (int a = 0; a < p0.dim(); ++a)
    x[a] = p0.means(pick, a) + rng.normal() / std::sqrt(2.0 * p0.precisions(pick, a));
  return x;
}

/// Euler-Maruyama for the Brownian case: X += mu dt + sqrt(2 dt) sqrtm(D) xi.
/// Returns one n_paths x d matrix per requested time.
inline std::vector<MatrixXd> euler_maruyama(const SdeProblem& problem, int n_paths, int n_steps,
                                            std::uint64_t seed, const std::vector<double>& times) {
  problem.validate();
  if (problem.noise != NoiseKind::kBrownian)
    throw std::invalid_argument("euler_maruyama: Brownian noise required");
  if (n_steps < 100) throw std::invalid_argument("euler_maruyama: n_steps >= 100 required");

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(problem.diffusion);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw std::invalid_argument("euler_maruyama: diffusion must be PSD");
  MatrixXd sqrt_d = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                    es.eigenvectors().transpose();

  const double dt = problem.horizon / n_steps;
  std::vector<int> record_steps;
  for (double t : times) {
    int k = static_cast<int>(std::lround(t / dt));
    if (k < 0 || k > n_steps) throw std::invalid_argument("euler_maruyama: time outside horizon");
    record_steps.push_back(k);
  }

  const int d = problem.dim;
  std::vector<MatrixXd> out(times.size(), MatrixXd(n_paths, d));
  const double step_scale = std::sqrt(2.0 * dt);
  parallel_indices(n_paths, [&](std::int64_t path) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(path));
    VectorXd x = sample_mixture(problem.p0, rng);
    for (size_t r = 0; r < record_steps.size(); ++r)
      if (record_steps[r] == 0) out[r].row(path) = x.transpose();
    VectorXd noise(d);
    for (int k = 0; k < n_steps; ++k) {
      double t = k * dt;
      for (int a = 0; a < d; ++a) noise[a] = rng.normal();
      x += problem.drift_at(x, t) * dt + step_scale * (sqrt_d * noise);
      for (size_t r = 0; r < record_steps.size(); ++r)
        if (record_steps[r] == k + 1) out[r].row(path) = x.transpose();
    }
  });
  return out;
}

/// Euler scheme for the alpha-stable case: X += mu dt + dt^{1/alpha} L, with L
/// a standard isotropic alpha-stable draw.
inline std::vector<MatrixXd> stable_euler(const SdeProblem& problem, int n_paths, int n_steps,
                                          std::uint64_t seed, const std::vector<double>& times) {
  problem.validate();
  if (problem.noise != NoiseKind::kStable)
    throw std::invalid_argument("stable_euler: stable noise required");
  if (n_steps < 100) throw std::invalid_argument("stable_euler: n_steps >= 100 required");

  const double dt = problem.horizon / n_steps;
  std::vector<int> record_steps;
  for (double t : times) {
    int k = static_cast<int>(std::lround(t / dt));
    if (k < 0 || k > n_steps) throw std::invalid_argument("stable_euler: time outside horizon");
    record_steps.push_back(k);
  }

  const int d = problem.dim;
  const double noise_scale = std::pow(dt, 1.0 / problem.alpha);
  std::vector<MatrixXd> out(times.size(), MatrixXd(n_paths, d));
  parallel_indices(n_paths, [&](std::int64_t path) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(path));
    VectorXd x = sample_mixture(problem.p0, rng);
    for (size_t r = 0; r < record_steps.size(); ++r)
      if (record_steps[r] == 0) out[r].row(path) = x.transpose();
    for (int k = 0; k < n_steps; ++k) {
      double t = k * dt;
      x += problem.drift_at(x, t) * dt + noise_scale * stable_isotropic_draw(rng, problem.alpha, d);
      for (size_t r = 0; r < record_steps.size(); ++r)
        if (record_steps[r] == k + 1) out[r].row(path) = x.transpose();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form Ornstein-Uhlenbeck marginal, the end-to-end oracle.

struct OuMarginal {
  VectorXd mean;
  VectorXd variance;
};

/// dX = -theta X dt + sigma dW with Gaussian p0: mean m0 e^{-theta t},
/// variance v0 e^{-2 theta t} + sigma^2 (1 - e^{-2 theta t}) / (2 theta), per axis.
inline OuMarginal analytic_ou(const VectorXd& theta, double sigma, const VectorXd& mean0,
                              const VectorXd& var0, double t) {
  for (int a = 0; a < theta.size(); ++a)
    if (!(theta[a] > 0.0)) throw std::invalid_argument("analytic_ou: theta must be positive");
  OuMarginal out;
  out.mean = mean0.cwiseProduct((-theta * t).array().exp().matrix());
  out.variance.resize(theta.size());
  for (int a = 0; a < theta.size(); ++a) {
    double decay = std::exp(-2.0 * theta[a] * t);
    out.variance[a] = var0[a] * decay + sigma * sigma * (1.0 - decay) / (2.0 * theta[a]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

/// Exact empirical W1 in one dimension (area between the step CDFs).
inline double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (size_t k = 0; k < a.size(); ++k) acc += std::abs(a[k] - b[k]);
    return acc / a.size();
  }
  // Unequal sizes: integrate |F_a - F_b| over the merged support.
  size_t ia = 0, ib = 0;
  double acc = 0.0, prev = std::min(a[0], b[0]);
  while (ia < a.size() || ib < b.size()) {
    double xa = ia < a.size() ? a[ia] : std::numeric_limits<double>::infinity();
    double xb = ib < b.size() ? b[ib] : std::numeric_limits<double>::infinity();
    double x = std::min(xa, xb);
    double fa = static_cast<double>(ia) / a.size();
    double fb = static_cast<double>(ib) / b.size();
    acc += std::abs(fa - fb) * (x - prev);
    prev = x;
    while (ia < a.size() && a[ia] == x) ++ia;
    while (ib < b.size() && b[ib] == x) ++ib;
  }
  return acc;
}

/// W1 against an analytic quantile function, by quantile integration.
inline double wasserstein1_vs_quantile(std::vector<double> samples,
                                       const std::function<double(double)>& quantile,
                                       int grid = 10000) {
  if (samples.empty()) throw std::invalid_argument("wasserstein1_vs_quantile: empty sample set");
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  double acc = 0.0;
  for (int k = 0; k < grid; ++k) {
    double u = (k + 0.5) / grid;
    double emp = samples[std::min(n - 1, static_cast<size_t>(u * n))];
    acc += std::abs(emp - quantile(u));
  }
  return acc / grid;
}

/// Sliced W1 for d > 1: average of 1-D distances over fixed unit projections.
inline double sliced_wasserstein1(const MatrixXd& a, const MatrixXd& b, int n_projections = 64,
                                  std::uint64_t seed = 20240901) {
  if (a.cols() != b.cols()) throw std::invalid_argument("sliced_wasserstein1: dimension mismatch");
  if (a.cols() == 1)
    return wasserstein1_1d(std::vector<double>(a.data(), a.data() + a.rows()),
                           std::vector<double>(b.data(), b.data() + b.rows()));
  Rng rng(seed);
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    VectorXd dir(a.cols());
    do {
      for (int i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    } while (dir.norm() == 0.0);
    dir.normalize();
    VectorXd pa = a * dir, pb = b * dir;
    acc += wasserstein1_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                           std::vector<double>(pb.data(), pb.data() + pb.size()));
  }
  return acc / n_projections;
}

/// Two-sided Kolmogorov-Smirnov statistic against an analytic CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: empty sample set");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double ks = 0.0;
  for (size_t k = 0; k < samples.size(); ++k) {
    double f = cdf(samples[k]);
    ks = std::max(ks, std::max(std::abs((k + 1) / n - f), std::abs(k / n - f)));
  }
  return ks;
}

/// L2 distance between a space-only model and a reference density on the box,
/// by tensor Gauss-Legendre quadrature (128 nodes/axis in 1-D, 64 in 2-D).
inline double l2_density_error(const GaussianPsdModel& model,
                               const std::function<double(const VectorXd&)>& reference,
                               const Box& box) {
  if (box.dim() > 2) throw std::invalid_argument("l2_density_error: d <= 2 only");
  int nodes = box.dim() == 1 ? 128 : 64;
  double err2 = integrate_box(
      [&](const VectorXd& x) {
        double gap = evaluate(model, x) - reference(x);
        return gap * gap;
      },
      box, nodes);
  return std::sqrt(std::max(0.0, err2));
}

}  // namespace psdfp
