#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "psdfp/common.hpp"
#include "psdfp/fpe_assembly.hpp"
#include "psdfp/psd_model.hpp"
#include "psdfp/quadrature.hpp"
#include "psdfp/rng.hpp"

namespace psdfp {

/// Fractional order s of (-Delta)^s, with stable index alpha = 2s. Signs are
/// the caller's: this module computes (-Delta)^s itself, and s = 1 reproduces
/// the classical -Laplacian.
struct FracOrder {
  double s = 1.0;

  explicit FracOrder(double order) : s(order) {
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("FracOrder: s in (0, 1] required");
    if (s < 0.5) PSDFP_LOG_WARN("FracOrder: s=%.3f below 1/2, outside the analyzed regime", s);
  }

  double alpha() const { return 2.0 * s; }
};

/// Frozen Monte-Carlo draw table: standard normals cached by seed so every
/// consumer sees the same draws and assembled objectives stay deterministic.
struct FrozenEstimator {
  std::uint64_t seed = 0;
  int n_mc = 0;
  MatrixXd xi;  // n_mc x d

  static FrozenEstimator create(std::uint64_t seed, int n_mc, int dim) {
    if (n_mc < 1) throw std::invalid_argument("FrozenEstimator: n_mc >= 1 required");
    FrozenEstimator est;
    est.seed = seed;
    est.n_mc = n_mc;
    est.xi.resize(n_mc, dim);
    Rng rng(seed ^ 0x8f1bbcdcbfa53e0bull);
    for (int r = 0; r < n_mc; ++r)
      for (int a = 0; a < dim; ++a) est.xi(r, a) = rng.normal();
    return est;
  }
};

struct FracEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

namespace detail {

inline double isotropic_bandwidth(const GaussianPsdModel& model) {
  double eta = model.bandwidth[0];
  for (int a = 1; a < model.dim(); ++a)
    if (std::abs(model.bandwidth[a] - eta) > 1e-12 * eta)
      throw std::invalid_argument("frac_ops: isotropic bandwidth required");
  return eta;
}

struct PairGeometry {
  VectorXd coeff;  // (2 - delta) A_ij exp(-eta ||xi - xj||^2 / 2)
  MatrixXd mid;    // pair midpoints
};

inline PairGeometry pair_geometry(const GaussianPsdModel& model) {
  PairIndex index(model.size());
  PairGeometry geo;
  geo.coeff.resize(index.count());
  geo.mid.resize(index.count(), model.dim());
  for (int p = 0; p < index.count(); ++p) {
    auto [i, j] = index.pairs[p];
    double sep = 0.0;
    for (int a = 0; a < model.dim(); ++a) {
      double dz = model.base_points(i, a) - model.base_points(j, a);
      sep += model.bandwidth[a] * dz * dz;
      geo.mid(p, a) = 0.5 * (model.base_points(i, a) + model.base_points(j, a));
    }
    geo.coeff[p] = (i == j ? 1.0 : 2.0) * model.coeff(i, j) * std::exp(-0.5 * sep);
  }
  return geo;
}

}  // namespace detail

/// (-Delta)^s of a Gaussian-kernel PSD model at x, Monte Carlo over the
/// pair-feature Fourier transform:
///   sum_p coeff_p E_{xi ~ N(0, 4 eta I)} [ ||xi||^{2s} cos(xi . (x - mid_p)) ].
/// The prefactor of the expectation works out to exactly 1 in this form
/// (cross-checked against frac_laplacian_quadrature in the tests).
inline FracEstimate frac_laplacian_gaussian(const GaussianPsdModel& model, const VectorXd& x,
                                            FracOrder order, const FrozenEstimator& est) {
  if (model.has_time) throw std::invalid_argument("frac_laplacian_gaussian: space-only model");
  if (est.n_mc < 2 || est.xi.cols() != model.dim())
    throw std::invalid_argument("frac_laplacian_gaussian: estimator misconfigured");
  const double eta = detail::isotropic_bandwidth(model);
  const double draw_scale = 2.0 * std::sqrt(eta);
  detail::PairGeometry geo = detail::pair_geometry(model);
  const int pairs = static_cast<int>(geo.coeff.size());

  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < est.n_mc; ++r) {
    VectorXd xi = draw_scale * est.xi.row(r).transpose();
    double weight = std::pow(xi.squaredNorm(), order.s);
    double h = 0.0;
    for (int p = 0; p < pairs; ++p) {
      if (geo.coeff[p] == 0.0) continue;
      double phase = 0.0;
      for (int a = 0; a < model.dim(); ++a) phase += xi[a] * (x[a] - geo.mid(p, a));
      h += geo.coeff[p] * std::cos(phase);
    }
    h *= weight;
    double delta = h - mean;
    mean += delta / (r + 1);
    m2 += delta * (h - mean);
  }
  double var = m2 / (est.n_mc - 1);
  return {mean, std::sqrt(std::max(0.0, var) / est.n_mc)};
}

/// (-Delta)^s via the Bochner route: omega_l, omega_k drawn i.i.d. from the
/// kernel's spectral density q,
///   sum_ij A_ij E [ ||omega_l + omega_k||^{2s} cos(omega_l.(x - x_i) + omega_k.(x - x_j)) ].
/// With the Gaussian spectral density q = N(0, 2 eta I) this agrees with
/// frac_laplacian_gaussian within Monte Carlo error.
inline FracEstimate frac_laplacian_bochner(const GaussianPsdModel& model, const VectorXd& x,
                                           FracOrder order,
                                           const std::function<VectorXd(Rng&)>& q_sampler,
                                           const FrozenEstimator& est) {
  if (model.has_time) throw std::invalid_argument("frac_laplacian_bochner: space-only model");
  if (est.n_mc < 2) throw std::invalid_argument("frac_laplacian_bochner: estimator misconfigured");
  const int d = model.dim();
  const int m = model.size();

  Rng rng(est.seed ^ 0x94d049bb133111ebull);
  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < est.n_mc; ++r) {
    VectorXd wl = q_sampler(rng);
    VectorXd wk = q_sampler(rng);
    if (wl.size() != d || wk.size() != d)
      throw std::invalid_argument("frac_laplacian_bochner: sampler dimension mismatch");
    double weight = std::pow((wl + wk).squaredNorm(), order.s);
    VectorXd pl = model.base_points * wl;  // omega_l . x_i
    VectorXd pk = model.base_points * wk;
    double phase_l = wl.dot(x), phase_k = wk.dot(x);
    double h = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (model.coeff(i, j) != 0.0)
          h += model.coeff(i, j) * std::cos((phase_l - pl[i]) + (phase_k - pk[j]));
    h *= weight;
    double delta = h - mean;
    mean += delta / (r + 1);
    m2 += delta * (h - mean);
  }
  double var = m2 / (est.n_mc - 1);
  return {mean, std::sqrt(std::max(0.0, var) / est.n_mc)};
}

/// Spectral density sampler of the Gaussian kernel exp(-eta ||x-y||^2),
/// q = N(0, 2 eta I); pairs frac_laplacian_bochner with the Gaussian case.
inline std::function<VectorXd(Rng&)> gaussian_spectral_sampler(double eta, int dim) {
  double scale = std::sqrt(2.0 * eta);
  return [scale, dim](Rng& rng) {
    VectorXd w(dim);
    for (int a = 0; a < dim; ++a) w[a] = scale * rng.normal();
    return w;
  };
}

/// Deterministic Fourier-multiplier oracle for d <= 2 (isotropic bandwidth in
/// 2-D). s = 0 is allowed here and reproduces the model itself.
inline double frac_laplacian_quadrature(const GaussianPsdModel& model, const VectorXd& x, double s,
                                        double abs_tol = 1e-10) {
  if (model.has_time) throw std::invalid_argument("frac_laplacian_quadrature: space-only model");
  if (!(s >= 0.0 && s <= 1.0))
    throw std::invalid_argument("frac_laplacian_quadrature: s in [0, 1] required");
  const int d = model.dim();
  if (d > 2) throw std::invalid_argument("frac_laplacian_quadrature: d <= 2 only");
  detail::PairGeometry geo = detail::pair_geometry(model);
  const int pairs = static_cast<int>(geo.coeff.size());

  double total = 0.0;
  if (d == 1) {
    const double eta = model.bandwidth[0];
    const double cutoff = std::sqrt(8.0 * eta) * 14.0;
    const double prefactor = std::sqrt(M_PI / (2.0 * eta)) / (2.0 * M_PI);
    for (int p = 0; p < pairs; ++p) {
      if (geo.coeff[p] == 0.0) continue;
      double r = x[0] - geo.mid(p, 0);
      double integral = 2.0 * integrate_paneled(
                                  [&](double xi) {
                                    return std::pow(xi * xi, s) *
                                           std::exp(-xi * xi / (8.0 * eta)) * std::cos(xi * r);
                                  },
                                  0.0, cutoff, 28, abs_tol);
      total += geo.coeff[p] * prefactor * integral;
    }
  } else {
    const double eta = detail::isotropic_bandwidth(model);
    const double cutoff = std::sqrt(8.0 * eta) * 14.0;
    const double prefactor = 1.0 / (4.0 * eta);  // (pi / 2 eta) * 2 pi / (2 pi)^2
    for (int p = 0; p < pairs; ++p) {
      if (geo.coeff[p] == 0.0) continue;
      double r = (x - geo.mid.row(p).transpose()).norm();
      double integral = integrate_paneled(
          [&](double rho) {
            return std::pow(rho, 2.0 * s + 1.0) * std::exp(-rho * rho / (8.0 * eta)) *
                   std::cyl_bessel_j(0.0, rho * r);
          },
          0.0, cutoff, 28, abs_tol);
      total += geo.coeff[p] * prefactor * integral;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Collocation assembly of the fractional FPE residual
//   J(A) = sum_n w_n ( [d/dt + div(mu .) + (-Delta_x)^s] p(z_n) )^2 + penalties.
// The fractional operator acts on the spatial coordinates at fixed time; the
// pair feature factorizes, so its time factor scales the spatial estimate.
// All collocation nodes share the frozen draw table, making J a fixed
// deterministic quadratic in A.

inline ResidualProblem assemble_frac_fpe(const MatrixXd& base_points, const VectorXd& eta,
                                         const RkhsDrift* drift, FracOrder order,
                                         const GaussianMixture& p0, const Box& domain,
                                         const MatrixXd& colloc_points,
                                         const VectorXd& colloc_weights,
                                         const FrozenEstimator& est,
                                         const AssemblyOptions& opts = {}) {
  detail::check_base_points(base_points);
  p0.validate();
  if (drift) drift->validate();
  const int dim = static_cast<int>(base_points.cols());
  const int d = dim - 1;
  const int n_nodes = static_cast<int>(colloc_points.rows());
  if (n_nodes < 1) throw std::invalid_argument("assemble_frac_fpe: empty collocation set");
  if (colloc_points.cols() != dim || colloc_weights.size() != n_nodes)
    throw std::invalid_argument("assemble_frac_fpe: collocation size mismatch");
  for (int n = 0; n < n_nodes; ++n)
    if (!domain.contains(colloc_points.row(n).transpose(), 1e-9))
      throw std::invalid_argument("assemble_frac_fpe: collocation node outside the box");
  const double eta_x = eta[0];
  for (int a = 1; a < d; ++a)
    if (std::abs(eta[a] - eta_x) > 1e-12 * eta_x)
      throw std::invalid_argument("assemble_frac_fpe: isotropic spatial bandwidth required");
  if (est.xi.cols() != d || est.n_mc < 2)
    throw std::invalid_argument("assemble_frac_fpe: estimator dimension mismatch");

  ResidualProblem prob;
  prob.index = PairIndex(static_cast<int>(base_points.rows()));
  const int pairs = prob.pair_count();

  // Local terms (time derivative + drift divergence) evaluated pointwise.
  MatrixXd features(n_nodes, pairs);
  {
    std::vector<std::vector<PolyGaussian>> terms(pairs);
    for (int p = 0; p < pairs; ++p) {
      auto [i, j] = prob.index.pairs[p];
      terms[p] = apply_fpe_operator(base_points.row(i).transpose(),
                                    base_points.row(j).transpose(), eta, drift, MatrixXd());
      prob.term_count += static_cast<long>(terms[p].size());
    }
    parallel_indices(n_nodes, [&](std::int64_t n) {
      VectorXd z = colloc_points.row(n).transpose();
      for (int p = 0; p < pairs; ++p) features(n, p) = eval_terms(terms[p], z);
    });
  }

  // Fractional part. Pair data in space: separation weight, midpoint phases.
  {
    const double draw_scale = 2.0 * std::sqrt(eta_x);
    VectorXd w_draw(est.n_mc);
    MatrixXd xi = draw_scale * est.xi;  // n_mc x d
    for (int r = 0; r < est.n_mc; ++r)
      w_draw[r] = std::pow(xi.row(r).squaredNorm(), order.s) / est.n_mc;

    // Half-phases per base point let pair phase tables be pure products:
    // cos(xi . mid_p) = cos(h_i + h_j) = cos h_i cos h_j - sin h_i sin h_j.
    const int m = static_cast<int>(base_points.rows());
    MatrixXd half = 0.5 * (xi * base_points.leftCols(d).transpose());  // n_mc x m
    MatrixXd base_cos = half.array().cos();
    MatrixXd base_sin = half.array().sin();

    VectorXd sep(pairs);  // exp(-eta_x ||xi - xj||^2 / 2), spatial axes
    VectorXd time_i(pairs), time_j(pairs);
    for (int p = 0; p < pairs; ++p) {
      auto [i, j] = prob.index.pairs[p];
      double e = 0.0;
      for (int a = 0; a < d; ++a) {
        double dz = base_points(i, a) - base_points(j, a);
        e += eta_x * dz * dz;
      }
      sep[p] = std::exp(-0.5 * e);
      time_i[p] = base_points(i, d);
      time_j[p] = base_points(j, d);
    }

    MatrixXd pair_cos(est.n_mc, pairs), pair_sin(est.n_mc, pairs);
    for (int p = 0; p < pairs; ++p) {
      auto [i, j] = prob.index.pairs[p];
      double sp = sep[p];
      pair_cos.col(p) = w_draw.cwiseProduct(
          (base_cos.col(i).cwiseProduct(base_cos.col(j)) -
           base_sin.col(i).cwiseProduct(base_sin.col(j))) * sp);
      pair_sin.col(p) = w_draw.cwiseProduct(
          (base_sin.col(i).cwiseProduct(base_cos.col(j)) +
           base_cos.col(i).cwiseProduct(base_sin.col(j))) * sp);
    }

    const double eta_t = eta[d];
    const int block = 512;
    parallel_indices((n_nodes + block - 1) / block, [&](std::int64_t bi) {
      int lo = static_cast<int>(bi) * block;
      int hi = std::min(n_nodes, lo + block);
      int rows = hi - lo;
      MatrixXd phase = colloc_points.block(lo, 0, rows, d) * xi.transpose();  // rows x n_mc
      MatrixXd node_cos = phase.array().cos();
      MatrixXd node_sin = phase.array().sin();
      // cos(xi . (x_n - mid_p)) = cos(phase_n) cos(xi . mid_p) + sin(phase_n) sin(xi . mid_p)
      MatrixXd frac = node_cos * pair_cos + node_sin * pair_sin;  // rows x pairs
      for (int n = lo; n < hi; ++n) {
        double t = colloc_points(n, d);
        for (int p = 0; p < pairs; ++p) {
          double dti = t - time_i[p], dtj = t - time_j[p];
          double time_factor = std::exp(-eta_t * (dti * dti + dtj * dtj));
          features(n, p) += time_factor * frac(n - lo, p);
        }
      }
    });
  }

  prob.gram = MatrixXd::Zero(pairs, pairs);
  {
    MatrixXd weighted = colloc_weights.asDiagonal() * features;
    MatrixXd q = features.transpose() * weighted;
    prob.gram = 0.5 * (q + q.transpose());
  }

  prob.slice0 = detail::pair_slices_at_zero(base_points, eta, prob.index);
  detail::fold_in_penalties(prob, p0, opts);
  detail::mirror_upper(prob.gram);
  detail::add_coeff_ridge(prob, opts.coeff_ridge_rel);

  PSDFP_LOG_INFO("assemble_frac_fpe: m=%d pairs=%d nodes=%d n_mc=%d s=%.3f", prob.m(), pairs,
                 n_nodes, est.n_mc, order.s);
  return prob;
}

}  // namespace psdfp
