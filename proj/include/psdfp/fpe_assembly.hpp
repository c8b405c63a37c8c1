#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "psdfp/common.hpp"
#include "psdfp/drift.hpp"
#include "psdfp/gaussian_algebra.hpp"
#include "psdfp/psd_model.hpp"
#include "psdfp/rng.hpp"

namespace psdfp {

/// Gaussian mixture with normalized components; used for the initial density.
struct GaussianMixture {
  MatrixXd means;       // K x d
  MatrixXd precisions;  // K x d, exponent coefficients q in exp(-q (x-c)^2)
  VectorXd weights;     // K, nonnegative, summing to 1

  int components() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  void validate() const {
    if (precisions.rows() != components() || precisions.cols() != dim() ||
        weights.size() != components())
      throw std::invalid_argument("GaussianMixture: field size mismatch");
    double sum = 0.0;
    for (int k = 0; k < components(); ++k) {
      if (!(weights[k] >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
      sum += weights[k];
      for (int a = 0; a < dim(); ++a)
        if (!(precisions(k, a) > 0.0))
          throw std::invalid_argument("GaussianMixture: precision must be positive");
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  }

  /// Component k as a closed-form term (normalization folded into the weight).
  GaussianTerm term(int k) const {
    double norm = 1.0;
    for (int a = 0; a < dim(); ++a) norm *= std::sqrt(precisions(k, a) / M_PI);
    return GaussianTerm(means.row(k).transpose(), precisions.row(k).transpose(),
                        weights[k] * norm);
  }

  double density(const VectorXd& x) const {
    double v = 0.0;
    for (int k = 0; k < components(); ++k) v += term(k).eval(x);
    return v;
  }

  static GaussianMixture single(const VectorXd& mean, const VectorXd& variance) {
    GaussianMixture mix;
    mix.means = mean.transpose();
    mix.precisions.resize(1, mean.size());
    for (int a = 0; a < mean.size(); ++a) mix.precisions(0, a) = 0.5 / variance[a];
    mix.weights = VectorXd::Ones(1);
    return mix;
  }
};

// ---------------------------------------------------------------------------
// Symmetric-matrix <-> pair-vector packing. Pairs (i, j), i <= j, are listed
// row-wise; pack doubles the off-diagonal entries so that
//   sum_{ij} A_ij Phi_ij = sum_{i<=j} pack(A)_k Phi_k.

struct PairIndex {
  int m = 0;
  std::vector<std::pair<int, int>> pairs;

  explicit PairIndex(int size = 0) : m(size) {
    pairs.reserve(static_cast<size_t>(m) * (m + 1) / 2);
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) pairs.emplace_back(i, j);
  }

  int count() const { return static_cast<int>(pairs.size()); }

  VectorXd pack(const MatrixXd& a) const {
    VectorXd c(count());
    for (int k = 0; k < count(); ++k) {
      auto [i, j] = pairs[k];
      c[k] = (i == j) ? a(i, i) : 2.0 * a(i, j);
    }
    return c;
  }

  MatrixXd unpack(const VectorXd& v) const {
    MatrixXd s(m, m);
    for (int k = 0; k < count(); ++k) {
      auto [i, j] = pairs[k];
      s(i, j) = s(j, i) = v[k];
    }
    return s;
  }
};

/// Convex quadratic J(A) = pack(A)' gram pack(A) + linear' pack(A) + constant,
/// minimized over the PSD cone. The gram already folds in the weighted initial
/// condition and mass penalties; the stored pieces below let the parts be
/// reported separately.
struct ResidualProblem {
  PairIndex index;
  MatrixXd gram;    // M x M, symmetric PSD
  VectorXd linear;  // M
  double constant = 0.0;
  double ic_weight = 0.0;
  double mass_weight = 0.0;

  VectorXd mass_vec;                 // per-pair full-space mass of the t=0 slice
  std::vector<GaussianTerm> slice0;  // per-pair spatial Gaussian at t = 0
  VectorXd ic_cross;                 // per-pair <slice0, p0>
  double p0_norm2 = 0.0;             // <p0, p0>
  long term_count = 0;               // operator terms behind the gram

  int m() const { return index.m; }
  int pair_count() const { return index.count(); }

  double objective(const MatrixXd& a) const {
    VectorXd c = index.pack(a);
    return c.dot(gram * c) + linear.dot(c) + constant;
  }

  /// Gradient with respect to the symmetric matrix (trace inner product).
  MatrixXd gradient(const MatrixXd& a) const {
    VectorXd c = index.pack(a);
    return index.unpack(2.0 * (gram * c) + linear);
  }

  /// Largest eigenvalue of the pair-space gram by power iteration; the step
  /// size is 1/L with L derived from this, refined by backtracking halving.
  double lipschitz_estimate(int iters = 20, std::uint64_t seed = 7) const {
    Rng rng(seed);
    VectorXd v(pair_count());
    for (int k = 0; k < v.size(); ++k) v[k] = rng.normal();
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
      VectorXd w = gram * v;
      double norm = w.norm();
      if (!(norm > 0.0)) return 0.0;
      lambda = v.dot(w) / v.squaredNorm();
      v = w / norm;
    }
    return lambda;
  }

  double mass_at_zero(const MatrixXd& a) const { return mass_vec.dot(index.pack(a)); }

  double mass_part(const MatrixXd& a) const {
    double gap = mass_at_zero(a) - 1.0;
    return gap * gap;
  }

  /// || p(., 0) - p0 ||^2 over the full space, recomputed in closed form.
  double ic_part(const MatrixXd& a) const {
    if (slice0.empty()) return 0.0;
    VectorXd c = index.pack(a);
    double quad = 0.0;
    const int mm = pair_count();
    for (int p = 0; p < mm; ++p) {
      if (c[p] == 0.0) continue;
      PolyGaussian sp(slice0[p]);
      for (int q = p; q < mm; ++q) {
        double w = (q == p ? 1.0 : 2.0) * c[p] * c[q];
        if (w == 0.0) continue;
        quad += w * l2_inner_product(sp, PolyGaussian(slice0[q]), std::nullopt);
      }
    }
    return quad - 2.0 * ic_cross.dot(c) + p0_norm2;
  }

  double residual_part(const MatrixXd& a) const {
    return objective(a) - ic_weight * ic_part(a) - mass_weight * mass_part(a);
  }

  /// Bare quadratic with no penalty data; toy problems and custom objectives.
  static ResidualProblem from_quadratic(int m, MatrixXd gram_in, VectorXd linear_in,
                                        double constant_in) {
    ResidualProblem prob;
    prob.index = PairIndex(m);
    if (gram_in.rows() != prob.pair_count() || gram_in.cols() != prob.pair_count() ||
        linear_in.size() != prob.pair_count())
      throw std::invalid_argument("ResidualProblem: quadratic size mismatch");
    prob.gram = std::move(gram_in);
    prob.linear = std::move(linear_in);
    prob.constant = constant_in;
    prob.mass_vec = VectorXd::Zero(prob.pair_count());
    prob.ic_cross = VectorXd::Zero(prob.pair_count());
    return prob;
  }
};

struct AssemblyOptions {
  double ic_weight = 10.0;
  double mass_weight = 1.0;
  Domain residual_domain = Domain::kTimeBox;
  // Tikhonov term coeff_ridge_rel * lambda_max(gram) * ||A||_F^2. The kernel
  // gram has near-null directions along which the iterates are unbounded and
  // the objective evaluation itself degrades; a small explicit ridge keeps the
  // problem strongly convex and the certificate reachable. Set to 0 for exact
  // quadrature cross-checks.
  double coeff_ridge_rel = 1e-6;
};

/// Integration region for the residual norm; kTimeBox leaves the space axes
/// unbounded and clamps the time axis to the box range.
inline std::optional<Box> residual_region(Domain domain, const Box& box) {
  switch (domain) {
    case Domain::kFullSpace:
      return std::nullopt;
    case Domain::kBox:
      return box;
    case Domain::kTimeBox: {
      const double inf = std::numeric_limits<double>::infinity();
      VectorXd lo = VectorXd::Constant(box.dim(), -inf);
      VectorXd hi = VectorXd::Constant(box.dim(), inf);
      lo[box.dim() - 1] = box.lower[box.dim() - 1];
      hi[box.dim() - 1] = box.upper[box.dim() - 1];
      return Box(lo, hi);
    }
  }
  return std::nullopt;
}

namespace detail {

inline void check_base_points(const MatrixXd& base_points) {
  const int m = static_cast<int>(base_points.rows());
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if ((base_points.row(i) - base_points.row(j)).cwiseAbs().maxCoeff() <= 1e-12)
        throw std::invalid_argument("assembly: duplicate base points");
}

/// Spatial Gaussians Phi_ij(., 0), time factor folded into the weight.
inline std::vector<GaussianTerm> pair_slices_at_zero(const MatrixXd& base_points,
                                                     const VectorXd& eta,
                                                     const PairIndex& index) {
  const int dim = static_cast<int>(base_points.cols());
  const int time_axis = dim - 1;
  std::vector<GaussianTerm> out;
  out.reserve(index.count());
  for (const auto& [i, j] : index.pairs) {
    GaussianTerm g = product(GaussianTerm(base_points.row(i).transpose(), eta, 1.0),
                             GaussianTerm(base_points.row(j).transpose(), eta, 1.0));
    double w = g.weight * std::exp(-g.precision[time_axis] * g.center[time_axis] *
                                   g.center[time_axis]);
    out.emplace_back(g.center.head(time_axis), g.precision.head(time_axis), w);
  }
  return out;
}

/// Adds lambda_ic || p(.,0) - p0 ||^2 + lambda_mass (mass0 - 1)^2 to the problem.
inline void fold_in_penalties(ResidualProblem& prob, const GaussianMixture& p0,
                              const AssemblyOptions& opts) {
  const int count = prob.pair_count();
  const int d = p0.dim();
  prob.ic_weight = opts.ic_weight;
  prob.mass_weight = opts.mass_weight;

  prob.mass_vec.resize(count);
  for (int p = 0; p < count; ++p) {
    double v = prob.slice0[p].weight;
    for (int a = 0; a < d; ++a) v *= std::sqrt(M_PI / prob.slice0[p].precision[a]);
    prob.mass_vec[p] = v;
  }

  prob.ic_cross.resize(count);
  for (int p = 0; p < count; ++p) {
    double v = 0.0;
    for (int k = 0; k < p0.components(); ++k)
      v += l2_inner_product(PolyGaussian(prob.slice0[p]), PolyGaussian(p0.term(k)), std::nullopt);
    prob.ic_cross[p] = v;
  }
  prob.p0_norm2 = 0.0;
  for (int k = 0; k < p0.components(); ++k)
    for (int l = 0; l < p0.components(); ++l)
      prob.p0_norm2 += l2_inner_product(PolyGaussian(p0.term(k)), PolyGaussian(p0.term(l)),
                                        std::nullopt);

  if (opts.ic_weight > 0.0) {
    parallel_indices(count, [&](std::int64_t p) {
      PolyGaussian sp(prob.slice0[p]);
      for (int q = static_cast<int>(p); q < count; ++q)
        prob.gram(p, q) += opts.ic_weight *
                           l2_inner_product(sp, PolyGaussian(prob.slice0[q]), std::nullopt);
    });
  }
  if (opts.mass_weight > 0.0)
    for (int p = 0; p < count; ++p)
      for (int q = p; q < count; ++q)
        prob.gram(p, q) += opts.mass_weight * prob.mass_vec[p] * prob.mass_vec[q];

  prob.linear = -2.0 * opts.ic_weight * prob.ic_cross - 2.0 * opts.mass_weight * prob.mass_vec;
  prob.constant = opts.ic_weight * prob.p0_norm2 + opts.mass_weight;
}

inline void mirror_upper(MatrixXd& a) {
  for (int i = 0; i < a.rows(); ++i)
    for (int j = i + 1; j < a.cols(); ++j) a(j, i) = a(i, j);
}

/// delta * ||A||_F^2 in pair coordinates: c_p^2 / (2 - delta_ij).
inline void add_coeff_ridge(ResidualProblem& prob, double ridge_rel) {
  if (!(ridge_rel > 0.0)) return;
  double delta = ridge_rel * std::max(prob.lipschitz_estimate(), 1e-300);
  for (int p = 0; p < prob.pair_count(); ++p) {
    auto [i, j] = prob.index.pairs[p];
    prob.gram(p, p) += delta / (i == j ? 1.0 : 2.0);
  }
}

}  // namespace detail

/// Build the closed-form quadratic for the Fokker-Planck residual
///   J(A) = || dp/dt + div(mu p) - sum D_ab d^2 p ||^2_{L2}
///        + lambda_ic || p(., 0) - p0 ||^2 + lambda_mass (mass(0) - 1)^2
/// over Gaussian PSD models with the given base points and bandwidth.
inline ResidualProblem assemble_fpe(const MatrixXd& base_points, const VectorXd& eta,
                                    const RkhsDrift* drift, const MatrixXd& diffusion,
                                    const GaussianMixture& p0, const Box& domain,
                                    const AssemblyOptions& opts = {}) {
  detail::check_base_points(base_points);
  p0.validate();
  if (drift) drift->validate();
  if (diffusion.size() != 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(diffusion, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
      throw std::invalid_argument("assemble_fpe: diffusion must be PSD");
  }

  const int m = static_cast<int>(base_points.rows());
  ResidualProblem prob;
  prob.index = PairIndex(m);
  const int count = prob.pair_count();

  std::vector<std::vector<PolyGaussian>> terms(count);
  for (int p = 0; p < count; ++p) {
    auto [i, j] = prob.index.pairs[p];
    terms[p] = apply_fpe_operator(base_points.row(i).transpose(), base_points.row(j).transpose(),
                                  eta, drift, diffusion);
    prob.term_count += static_cast<long>(terms[p].size());
  }

  const std::optional<Box> residual_box = residual_region(opts.residual_domain, domain);

  prob.gram = MatrixXd::Zero(count, count);
  parallel_indices(count, [&](std::int64_t p) {
    for (int q = static_cast<int>(p); q < count; ++q) {
      double v = 0.0;
      for (const auto& ta : terms[p])
        for (const auto& tb : terms[q]) v += l2_inner_product(ta, tb, residual_box);
      prob.gram(p, q) = v;
    }
  });

  prob.slice0 = detail::pair_slices_at_zero(base_points, eta, prob.index);
  detail::fold_in_penalties(prob, p0, opts);
  detail::mirror_upper(prob.gram);
  detail::add_coeff_ridge(prob, opts.coeff_ridge_rel);

  PSDFP_LOG_INFO("assemble_fpe: m=%d pairs=%d operator_terms=%ld lipschitz~%.3e", m, count,
                 prob.term_count, prob.lipschitz_estimate());
  return prob;
}

// ---------------------------------------------------------------------------

/// Cached pointwise evaluator for the FPE residual of a space-time model.
class FpeResidualEvaluator {
 public:
  FpeResidualEvaluator(const GaussianPsdModel& model, const RkhsDrift* drift,
                       const MatrixXd& diffusion)
      : index_(model.size()), coeff_(index_.pack(model.coeff)) {
    terms_.reserve(index_.count());
    for (const auto& [i, j] : index_.pairs)
      terms_.push_back(apply_fpe_operator(model.base_points.row(i).transpose(),
                                          model.base_points.row(j).transpose(), model.bandwidth,
                                          drift, diffusion));
  }

  double operator()(const VectorXd& z) const {
    double v = 0.0;
    for (int p = 0; p < index_.count(); ++p)
      if (coeff_[p] != 0.0) v += coeff_[p] * eval_terms(terms_[p], z);
    return v;
  }

 private:
  PairIndex index_;
  VectorXd coeff_;
  std::vector<std::vector<PolyGaussian>> terms_;
};

/// FPE residual of the model at a point (diagnostics and quadrature checks).
inline double residual_pointwise(const GaussianPsdModel& model, const RkhsDrift* drift,
                                 const MatrixXd& diffusion, const VectorXd& z) {
  return FpeResidualEvaluator(model, drift, diffusion)(z);
}

}  // namespace psdfp
