#pragma once

#include <functional>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "psdfp/common.hpp"

namespace psdfp {

/// Drift field given as per-component Gaussian-kernel expansions over shared
/// centers in the space-time domain:
///   mu_a(z) = sum_l weights(a, l) * exp(-sum_c gamma_c (z_c - centers(l, c))^2).
struct RkhsDrift {
  MatrixXd centers;  // L x D
  MatrixXd weights;  // d x L, one row per spatial component
  VectorXd gamma;    // D, per-axis kernel exponent

  int num_centers() const { return static_cast<int>(centers.rows()); }
  int ambient_dim() const { return static_cast<int>(centers.cols()); }
  int space_dim() const { return static_cast<int>(weights.rows()); }

  void validate() const {
    if (weights.cols() != centers.rows())
      throw std::invalid_argument("RkhsDrift: weights/centers size mismatch");
    if (gamma.size() != centers.cols())
      throw std::invalid_argument("RkhsDrift: gamma dimension mismatch");
    for (int a = 0; a < gamma.size(); ++a)
      if (!(gamma[a] > 0.0)) throw std::invalid_argument("RkhsDrift: bandwidth must be positive");
  }

  double kernel(int l, const VectorXd& z) const {
    double e = 0.0;
    for (int a = 0; a < z.size(); ++a) {
      double dz = z[a] - centers(l, a);
      e += gamma[a] * dz * dz;
    }
    return std::exp(-e);
  }

  double component(int a, const VectorXd& z) const {
    double v = 0.0;
    for (int l = 0; l < num_centers(); ++l) v += weights(a, l) * kernel(l, z);
    return v;
  }

  VectorXd value(const VectorXd& z) const {
    VectorXd mu(space_dim());
    for (int a = 0; a < space_dim(); ++a) mu[a] = component(a, z);
    return mu;
  }

  /// d mu_a / d z_axis, closed form.
  double component_derivative(int a, int axis, const VectorXd& z) const {
    double v = 0.0;
    for (int l = 0; l < num_centers(); ++l)
      v += weights(a, l) * (-2.0 * gamma[axis] * (z[axis] - centers(l, axis))) * kernel(l, z);
    return v;
  }
};

/// Max |mu_a| and |d mu_a / d x_a| sampled on a grid over the box; recorded as
/// fit diagnostics (the assembly assumes the drift is bounded on the box).
struct DriftBounds {
  double max_value = 0.0;
  double max_divergence_term = 0.0;
};

inline DriftBounds drift_bounds(const RkhsDrift& drift, const Box& box, int nodes_per_axis = 9) {
  if (nodes_per_axis < 2) throw std::invalid_argument("drift_bounds: nodes_per_axis >= 2");
  DriftBounds out;
  const int dim = box.dim();
  std::vector<int> idx(dim, 0);
  VectorXd z(dim);
  while (true) {
    for (int a = 0; a < dim; ++a)
      z[a] = box.lower[a] + box.width(a) * idx[a] / (nodes_per_axis - 1.0);
    for (int a = 0; a < drift.space_dim(); ++a) {
      out.max_value = std::max(out.max_value, std::abs(drift.component(a, z)));
      out.max_divergence_term =
          std::max(out.max_divergence_term, std::abs(drift.component_derivative(a, a, z)));
    }
    int a = 0;
    for (; a < dim; ++a) {
      if (++idx[a] < nodes_per_axis) break;
      idx[a] = 0;
    }
    if (a == dim) break;
  }
  return out;
}

/// Kernel ridge interpolation of an analytic drift on a tensor grid of cell
/// midpoints. Returns the expansion used by the assembly.
///
/// The ridge is raised until max |coefficient| <= max_coefficient. Wide-kernel
/// interpolation drives coefficients to ~1e6 with heavy cancellation, and the
/// closed-form Gram assembly then loses enough digits to leave the PSD cone;
/// capping the coefficients keeps that rounding inside the Gram tolerance at
/// the cost of a slightly less accurate drift fit.
inline RkhsDrift fit_rkhs_drift(const std::function<VectorXd(const VectorXd&)>& mu, int space_dim,
                                const Box& box, const std::vector<int>& nodes_per_axis,
                                const VectorXd& gamma, double ridge = 1e-13,
                                double max_coefficient = 1e4) {
  const int dim = box.dim();
  if (static_cast<int>(nodes_per_axis.size()) != dim)
    throw std::invalid_argument("fit_rkhs_drift: nodes_per_axis size mismatch");
  int total = 1;
  for (int a = 0; a < dim; ++a) {
    if (nodes_per_axis[a] < 1) throw std::invalid_argument("fit_rkhs_drift: empty axis");
    total *= nodes_per_axis[a];
  }

  MatrixXd centers(total, dim);
  std::vector<int> idx(dim, 0);
  for (int k = 0; k < total; ++k) {
    for (int a = 0; a < dim; ++a)
      centers(k, a) = box.lower[a] + box.width(a) * (idx[a] + 0.5) / nodes_per_axis[a];
    for (int a = 0; a < dim; ++a) {
      if (++idx[a] < nodes_per_axis[a]) break;
      idx[a] = 0;
    }
  }

  MatrixXd gram(total, total);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j <= i; ++j) {
      double e = 0.0;
      for (int a = 0; a < dim; ++a) {
        double dz = centers(i, a) - centers(j, a);
        e += gamma[a] * dz * dz;
      }
      gram(i, j) = gram(j, i) = std::exp(-e);
    }
  MatrixXd targets(total, space_dim);
  for (int k = 0; k < total; ++k) targets.row(k) = mu(centers.row(k).transpose()).transpose();

  MatrixXd coeffs;
  double effective_ridge = ridge;
  for (int attempt = 0; attempt < 24; ++attempt) {
    MatrixXd regularized = gram;
    regularized.diagonal().array() += effective_ridge;
    // The kernel system is symmetric PSD but often near-singular for wide
    // kernels; a truncated SVD solve is stable where LDLT loses digits.
    Eigen::BDCSVD<MatrixXd> solver(regularized, Eigen::ComputeThinU | Eigen::ComputeThinV);
    solver.setThreshold(1e-14);
    coeffs = solver.solve(targets);  // total x d
    if (coeffs.cwiseAbs().maxCoeff() <= max_coefficient) break;
    effective_ridge = std::max(effective_ridge * 10.0, 1e-300);
  }
  if (effective_ridge != ridge)
    PSDFP_LOG_DEBUG("fit_rkhs_drift: ridge raised to %.1e to cap coefficients at %.1e",
                    effective_ridge, max_coefficient);

  RkhsDrift drift;
  drift.centers = std::move(centers);
  drift.weights = coeffs.transpose();
  drift.gamma = gamma;
  drift.validate();
  return drift;
}

}  // namespace psdfp
