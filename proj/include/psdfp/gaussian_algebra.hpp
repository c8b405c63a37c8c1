#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "psdfp/common.hpp"
#include "psdfp/drift.hpp"

namespace psdfp {

// ---------------------------------------------------------------------------
// Multi-indices: 4 bits per axis, at most kMaxAxes axes, total degree <= 4.

inline constexpr int kMaxPolyDegree = 4;

inline int multi_index_get(std::uint32_t packed, int axis) {
  return static_cast<int>((packed >> (4 * axis)) & 0xFu);
}

inline std::uint32_t multi_index_bump(std::uint32_t packed, int axis, int by = 1) {
  return packed + (static_cast<std::uint32_t>(by) << (4 * axis));
}

inline int multi_index_degree(std::uint32_t packed) {
  int deg = 0;
  while (packed) {
    deg += static_cast<int>(packed & 0xFu);
    packed >>= 4;
  }
  return deg;
}

/// Sparse polynomial in absolute coordinates, keyed by packed multi-index.
class Poly {
 public:
  struct Monomial {
    std::uint32_t index;
    double coeff;
  };

  Poly() = default;

  static Poly constant(double c) {
    Poly p;
    if (c != 0.0) p.terms_.push_back({0u, c});
    return p;
  }

  /// c * z_axis + b
  static Poly affine(int axis, double c, double b) {
    Poly p;
    if (b != 0.0) p.terms_.push_back({0u, b});
    if (c != 0.0) p.terms_.push_back({multi_index_bump(0u, axis), c});
    p.sort_terms();
    return p;
  }

  void add(std::uint32_t index, double coeff) {
    if (coeff == 0.0) return;
    if (multi_index_degree(index) > kMaxPolyDegree)
      throw std::invalid_argument("Poly: degree above 4 is not supported");
    for (auto& t : terms_)
      if (t.index == index) {
        t.coeff += coeff;
        return;
      }
    terms_.push_back({index, coeff});
    sort_terms();
  }

  const std::vector<Monomial>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }

  int total_degree() const {
    int deg = 0;
    for (const auto& t : terms_) deg = std::max(deg, multi_index_degree(t.index));
    return deg;
  }

  Poly operator*(const Poly& other) const {
    Poly out;
    for (const auto& a : terms_)
      for (const auto& b : other.terms_) {
        std::uint32_t idx = a.index + b.index;
        if (multi_index_degree(idx) > kMaxPolyDegree)
          throw std::invalid_argument("Poly: product degree above 4");
        bool merged = false;
        for (auto& t : out.terms_)
          if (t.index == idx) {
            t.coeff += a.coeff * b.coeff;
            merged = true;
            break;
          }
        if (!merged) out.terms_.push_back({idx, a.coeff * b.coeff});
      }
    out.sort_terms();
    return out;
  }

  double eval(const VectorXd& z) const {
    double v = 0.0;
    for (const auto& t : terms_) {
      double mono = t.coeff;
      std::uint32_t idx = t.index;
      int axis = 0;
      while (idx) {
        int k = static_cast<int>(idx & 0xFu);
        for (int r = 0; r < k; ++r) mono *= z[axis];
        idx >>= 4;
        ++axis;
      }
      v += mono;
    }
    return v;
  }

 private:
  void sort_terms() {
    std::sort(terms_.begin(), terms_.end(),
              [](const Monomial& a, const Monomial& b) { return a.index < b.index; });
  }

  std::vector<Monomial> terms_;
};

// ---------------------------------------------------------------------------

/// weight * exp(-sum_a precision_a (z_a - center_a)^2)
struct GaussianTerm {
  VectorXd center;
  VectorXd precision;
  double weight = 1.0;

  GaussianTerm() = default;
  GaussianTerm(VectorXd c, VectorXd p, double w)
      : center(std::move(c)), precision(std::move(p)), weight(w) {
    if (center.size() != precision.size())
      throw std::invalid_argument("GaussianTerm: center/precision dimension mismatch");
    if (center.size() > kMaxAxes) throw std::invalid_argument("GaussianTerm: too many axes");
    for (int a = 0; a < precision.size(); ++a)
      if (!(precision[a] > 0.0))
        throw std::invalid_argument("GaussianTerm: precision must be positive");
  }

  int dim() const { return static_cast<int>(center.size()); }

  double eval(const VectorXd& z) const {
    double e = 0.0;
    for (int a = 0; a < dim(); ++a) {
      double dz = z[a] - center[a];
      e += precision[a] * dz * dz;
    }
    return weight * std::exp(-e);
  }
};

/// Product of two Gaussians is a Gaussian: precisions add, the center is the
/// precision-weighted mean, and the weight picks up the separation factor.
inline GaussianTerm product(const GaussianTerm& a, const GaussianTerm& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("product: dimension mismatch");
  const int dim = a.dim();
  VectorXd prec(dim), center(dim);
  double log_drop = 0.0;
  for (int i = 0; i < dim; ++i) {
    double pa = a.precision[i], pb = b.precision[i];
    double sum = pa + pb;
    prec[i] = sum;
    center[i] = (pa * a.center[i] + pb * b.center[i]) / sum;
    double dc = a.center[i] - b.center[i];
    log_drop += pa * pb / sum * dc * dc;
  }
  return GaussianTerm(std::move(center), std::move(prec), a.weight * b.weight * std::exp(-log_drop));
}

/// Polynomial (absolute coordinates, degree <= 4) times a Gaussian.
struct PolyGaussian {
  GaussianTerm gaussian;
  Poly poly;

  PolyGaussian() = default;
  PolyGaussian(GaussianTerm g, Poly p) : gaussian(std::move(g)), poly(std::move(p)) {}
  explicit PolyGaussian(GaussianTerm g) : gaussian(std::move(g)), poly(Poly::constant(1.0)) {}

  int dim() const { return gaussian.dim(); }
  double eval(const VectorXd& z) const { return gaussian.eval(z) * poly.eval(z); }
};

inline PolyGaussian product(const PolyGaussian& a, const PolyGaussian& b) {
  return PolyGaussian(product(a.gaussian, b.gaussian), a.poly * b.poly);
}

// ---------------------------------------------------------------------------
// Moments. One-dimensional building block: M_n = integral of z^n exp(-eta (z-c)^2)
// over the full line or [lo, hi]. Recursion about the center:
//   M_n = c M_{n-1} + (n-1)/(2 eta) M_{n-2} + boundary term,
// with boundary term -[z^{n-1} exp(-eta (z-c)^2)]_lo^hi / (2 eta) on a box.

namespace detail {

struct AxisMoments {
  double m[kMaxPolyDegree + 1];
};

inline AxisMoments axis_moments_full(double eta, double c) {
  AxisMoments out;
  out.m[0] = std::sqrt(M_PI / eta);
  out.m[1] = c * out.m[0];
  for (int n = 2; n <= kMaxPolyDegree; ++n)
    out.m[n] = c * out.m[n - 1] + (n - 1) / (2.0 * eta) * out.m[n - 2];
  return out;
}

/// Infinite endpoints are allowed (the boundary terms vanish), so partially
/// bounded domains like space x [0, horizon] work through the same path.
inline AxisMoments axis_moments_box(double eta, double c, double lo, double hi) {
  AxisMoments out;
  const double r = std::sqrt(eta);
  const double erf_lo = std::isinf(lo) ? -1.0 : std::erf(r * (lo - c));
  const double erf_hi = std::isinf(hi) ? 1.0 : std::erf(r * (hi - c));
  out.m[0] = 0.5 * std::sqrt(M_PI / eta) * (erf_hi - erf_lo);
  const double glo = std::isinf(lo) ? 0.0 : std::exp(-eta * (lo - c) * (lo - c));
  const double ghi = std::isinf(hi) ? 0.0 : std::exp(-eta * (hi - c) * (hi - c));
  double pow_lo = 1.0, pow_hi = 1.0;  // z^{n-1} at the endpoints
  for (int n = 1; n <= kMaxPolyDegree; ++n) {
    double boundary = -(pow_hi * ghi - pow_lo * glo) / (2.0 * eta);
    out.m[n] = c * out.m[n - 1] + boundary;
    if (n >= 2) out.m[n] += (n - 1) / (2.0 * eta) * out.m[n - 2];
    pow_lo *= std::isinf(lo) ? 0.0 : lo;
    pow_hi *= std::isinf(hi) ? 0.0 : hi;
  }
  return out;
}

}  // namespace detail

/// Exact integral of poly(z) * gaussian(z) over the full space or a box.
inline double moment_integral(const PolyGaussian& term, const std::optional<Box>& box) {
  const int dim = term.dim();
  if (box && box->dim() != dim) throw std::invalid_argument("moment_integral: box dimension mismatch");
  if (term.poly.total_degree() > kMaxPolyDegree)
    throw std::invalid_argument("moment_integral: degree above 4");
  detail::AxisMoments axis[kMaxAxes];
  for (int a = 0; a < dim; ++a)
    axis[a] = box ? detail::axis_moments_box(term.gaussian.precision[a], term.gaussian.center[a],
                                             box->lower[a], box->upper[a])
                  : detail::axis_moments_full(term.gaussian.precision[a], term.gaussian.center[a]);
  double total = 0.0;
  for (const auto& mono : term.poly.terms()) {
    double v = mono.coeff;
    for (int a = 0; a < dim; ++a) v *= axis[a].m[multi_index_get(mono.index, a)];
    total += v;
  }
  return term.gaussian.weight * total;
}

/// <a, b>_{L2(domain)} via the Gaussian product identity; symmetric. Inputs of
/// combined degree above 4 are rejected.
inline double l2_inner_product(const PolyGaussian& a, const PolyGaussian& b,
                               const std::optional<Box>& box) {
  if (a.poly.total_degree() + b.poly.total_degree() > kMaxPolyDegree)
    throw std::invalid_argument("l2_inner_product: combined degree above 4");
  return moment_integral(product(a, b), box);
}

// ---------------------------------------------------------------------------
// Fokker-Planck operator applied to a pair feature.
//
// The pair feature for base points z_i, z_j (last axis = time) is
//   Phi_ij(z) = k_eta(z_i, z) k_eta(z_j, z),
// a single Gaussian with per-axis precision 2 eta. The residual operator
//   L p = dp/dt + sum_a d/dx_a (mu_a p) - sum_ab D_ab d^2 p / dx_a dx_b
// applied to Phi_ij expands into finitely many degree-<=2 PolyGaussian terms:
// one for d/dt, one for the diffusion part, and one per (drift center, axis)
// with precision 2 eta + gamma from the kernel product.

inline std::vector<PolyGaussian> apply_fpe_operator(const VectorXd& zi, const VectorXd& zj,
                                                    const VectorXd& eta, const RkhsDrift* drift,
                                                    const MatrixXd& diffusion) {
  const int dim = static_cast<int>(zi.size());
  const int space_dim = dim - 1;
  const int time_axis = space_dim;
  if (zj.size() != dim || eta.size() != dim)
    throw std::invalid_argument("apply_fpe_operator: dimension mismatch");
  if (diffusion.size() != 0) {
    if (diffusion.rows() != space_dim || diffusion.cols() != space_dim)
      throw std::invalid_argument("apply_fpe_operator: diffusion must be d x d");
    if ((diffusion - diffusion.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, diffusion.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("apply_fpe_operator: diffusion must be symmetric");
  }
  if (drift) {
    drift->validate();
    if (drift->space_dim() != space_dim || drift->ambient_dim() != dim)
      throw std::invalid_argument("apply_fpe_operator: drift dimension mismatch");
  }

  GaussianTerm base = product(GaussianTerm(zi, eta, 1.0), GaussianTerm(zj, eta, 1.0));
  std::vector<PolyGaussian> terms;

  // d/dt: -2 rho_t (t - c_t) on the base Gaussian.
  {
    double rho_t = base.precision[time_axis];
    terms.emplace_back(base, Poly::affine(time_axis, -2.0 * rho_t, 2.0 * rho_t * base.center[time_axis]));
  }

  // -sum_ab D_ab d^2/dz_a dz_b, all in one degree-2 polynomial on the base Gaussian.
  if (diffusion.size() != 0 && diffusion.cwiseAbs().maxCoeff() > 0.0) {
    Poly p;
    for (int a = 0; a < space_dim; ++a)
      for (int b = 0; b < space_dim; ++b) {
        double dab = diffusion(a, b);
        if (dab == 0.0) continue;
        double ra = base.precision[a], rb = base.precision[b];
        double ca = base.center[a], cb = base.center[b];
        // d^2 G / dz_a dz_b = [4 ra rb (z_a-ca)(z_b-cb) - 2 ra delta_ab] G
        double q = -dab * 4.0 * ra * rb;
        p.add(multi_index_bump(multi_index_bump(0u, a), b), q);
        p.add(multi_index_bump(0u, a), -q * cb);
        p.add(multi_index_bump(0u, b), -q * ca);
        p.add(0u, q * ca * cb);
        if (a == b) p.add(0u, dab * 2.0 * ra);
      }
    if (!p.empty()) terms.emplace_back(base, std::move(p));
  }

  // sum_a d/dz_a (mu_a Phi): one term per drift center and axis, on base * k_gamma(w_l, .).
  if (drift) {
    for (int l = 0; l < drift->num_centers(); ++l) {
      GaussianTerm shifted =
          product(base, GaussianTerm(drift->centers.row(l).transpose(), drift->gamma, 1.0));
      for (int a = 0; a < space_dim; ++a) {
        double w = drift->weights(a, l);
        if (w == 0.0) continue;
        double ga = drift->gamma[a], ra = base.precision[a];
        double slope = -2.0 * (ga + ra);
        double offset = 2.0 * (ga * drift->centers(l, a) + ra * base.center[a]);
        GaussianTerm g = shifted;
        g.weight *= w;
        terms.emplace_back(std::move(g), Poly::affine(a, slope, offset));
      }
    }
  }

  return terms;
}

/// Pointwise value of the operator applied to the pair feature.
inline double eval_terms(const std::vector<PolyGaussian>& terms, const VectorXd& z) {
  double v = 0.0;
  for (const auto& t : terms) v += t.eval(z);
  return v;
}

}  // namespace psdfp
