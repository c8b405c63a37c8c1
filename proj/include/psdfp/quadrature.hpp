#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "psdfp/common.hpp"

namespace psdfp {

namespace detail {

template <typename Fn>
double adaptive_simpson_rec(const Fn& f, double a, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Adaptive Simpson on [a, b] to absolute tolerance.
template <typename Fn>
double integrate_adaptive(const Fn& f, double a, double b, double abs_tol = 1e-10,
                          int max_depth = 48) {
  if (a == b) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, abs_tol, max_depth);
}

/// Adaptive Simpson over fixed panels; use when the integrand is localized and
/// a single wide interval would let the initial probes miss it entirely.
template <typename Fn>
double integrate_paneled(const Fn& f, double a, double b, int panels, double abs_tol = 1e-10) {
  double h = (b - a) / panels, total = 0.0;
  for (int k = 0; k < panels; ++k)
    total += integrate_adaptive(f, a + k * h, a + (k + 1) * h, abs_tol / panels);
  return total;
}

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre nodes/weights on [-1, 1], by Newton iteration on P_n.
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Rule mapped to [a, b].
inline QuadratureRule gauss_legendre(int n, double a, double b) {
  QuadratureRule rule = gauss_legendre(n);
  double c = 0.5 * (a + b), h = 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = c + h * rule.nodes[i];
    rule.weights[i] *= h;
  }
  return rule;
}

/// Gauss-Hermite rule for weight exp(-x^2) via Golub-Welsch.
inline QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n >= 1 required");
  MatrixXd jac = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double b = std::sqrt(0.5 * k);
    jac(k, k - 1) = b;
    jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jac);
  if (es.info() != Eigen::Success) throw std::runtime_error("gauss_hermite: eigensolver failed");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mu0 = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = es.eigenvalues()[i];
    double v = es.eigenvectors()(0, i);
    rule.weights[i] = mu0 * v * v;
  }
  return rule;
}

/// Tensor-product quadrature of f over a box, n nodes per axis.
inline double integrate_box(const std::function<double(const VectorXd&)>& f, const Box& box,
                            int nodes_per_axis) {
  const int dim = box.dim();
  std::vector<QuadratureRule> rules;
  for (int a = 0; a < dim; ++a)
    rules.push_back(gauss_legendre(nodes_per_axis, box.lower[a], box.upper[a]));
  std::vector<int> idx(dim, 0);
  VectorXd z(dim);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    for (int a = 0; a < dim; ++a) {
      z[a] = rules[a].nodes[idx[a]];
      w *= rules[a].weights[idx[a]];
    }
    total += w * f(z);
    int a = 0;
    for (; a < dim; ++a) {
      if (++idx[a] < nodes_per_axis) break;
      idx[a] = 0;
    }
    if (a == dim) break;
  }
  return total;
}

/// Standard normal quantile (Acklam's rational approximation plus one Halley
/// refinement against erfc); accurate to ~1e-15 on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p in (0,1) required");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step.
  double e = 0.5 * std::erfc(-x / M_SQRT2) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / M_SQRT2); }

}  // namespace psdfp
