#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "psdfp/common.hpp"
#include "psdfp/fpe_assembly.hpp"
#include "psdfp/psd_model.hpp"
#include "psdfp/rng.hpp"

namespace psdfp {

struct SamplerConfig {
  double eps = 0.01;  // final bisection interval width <= eps / d per axis
  std::uint64_t seed = 0;
  int n_samples = 0;

  void validate() const {
    if (!(eps > 0.0)) throw std::invalid_argument("SamplerConfig: eps must be positive");
    if (n_samples < 0) throw std::invalid_argument("SamplerConfig: n_samples >= 0 required");
  }
};

struct SampleBatch {
  MatrixXd points;  // n x d, all inside the spatial box
  double t0 = 0.0;
  std::uint64_t seed = 0;
  double eps = 0.0;
  std::string model_fingerprint;
  int max_bisections_per_coordinate = 0;
  long total_bisections = 0;
};

namespace detail {

/// Per-pair data for the sequential-coordinate sampler. Along each axis a pair
/// contributes coefficient * exp(-2 eta (x - mid)^2); box integrals of the
/// trailing axes and the erf offset at the lower edge are precomputed.
struct SamplerTables {
  int m_pairs = 0;
  int dim = 0;
  VectorXd coeff;    // (2 - delta_ij) A_ij * prod_a separation factors
  MatrixXd mid;      // pair x axis midpoints
  MatrixXd box_int;  // pair x axis: integral of exp(-2 eta (x - mid)^2) over the box
  MatrixXd erf_lo;   // pair x axis: erf(sqrt(2 eta) (lower - mid))
  VectorXd rate;     // per-axis sqrt(2 eta)
  VectorXd norm;     // per-axis 0.5 sqrt(pi / (2 eta))

  explicit SamplerTables(const GaussianPsdModel& model) {
    PairIndex index(model.size());
    m_pairs = index.count();
    dim = model.dim();
    coeff.resize(m_pairs);
    mid.resize(m_pairs, dim);
    box_int.resize(m_pairs, dim);
    erf_lo.resize(m_pairs, dim);
    rate.resize(dim);
    norm.resize(dim);
    for (int a = 0; a < dim; ++a) {
      rate[a] = std::sqrt(2.0 * model.bandwidth[a]);
      norm[a] = 0.5 * std::sqrt(M_PI / (2.0 * model.bandwidth[a]));
    }
    for (int p = 0; p < m_pairs; ++p) {
      auto [i, j] = index.pairs[p];
      double c = (i == j ? 1.0 : 2.0) * model.coeff(i, j);
      for (int a = 0; a < dim; ++a) {
        double xi = model.base_points(i, a), xj = model.base_points(j, a);
        double eta = model.bandwidth[a];
        c *= std::exp(-0.5 * eta * (xi - xj) * (xi - xj));
        double mp = 0.5 * (xi + xj);
        mid(p, a) = mp;
        erf_lo(p, a) = std::erf(rate[a] * (model.domain.lower[a] - mp));
        box_int(p, a) =
            norm[a] * (std::erf(rate[a] * (model.domain.upper[a] - mp)) - erf_lo(p, a));
      }
      coeff[p] = c;
    }
  }

  /// Unnormalized mixture CDF along one axis for the given pair coefficients.
  double partial_cdf(const VectorXd& c, int axis, double x) const {
    double acc = 0.0;
    for (int p = 0; p < m_pairs; ++p)
      if (c[p] != 0.0)
        acc += c[p] * (std::erf(rate[axis] * (x - mid(p, axis))) - erf_lo(p, axis));
    return acc * norm[axis];
  }
};

}  // namespace detail

/// One-dimensional conditional CDF used by the bisection: axes before `axis`
/// fixed at `prefix`, axes after it integrated over their box ranges.
/// Normalized so F(lower) = 0 and F(upper) = 1.
inline double cdf_1d(const GaussianPsdModel& model, int axis, const VectorXd& prefix, double x) {
  if (model.has_time) throw std::invalid_argument("cdf_1d: space-only model required");
  if (axis < 0 || axis >= model.dim()) throw std::invalid_argument("cdf_1d: axis out of range");
  if (prefix.size() != axis) throw std::invalid_argument("cdf_1d: prefix size mismatch");
  if (x < model.domain.lower[axis] - 1e-12 || x > model.domain.upper[axis] + 1e-12)
    throw std::invalid_argument("cdf_1d: point outside the box");

  detail::SamplerTables tables(model);
  VectorXd c = tables.coeff;
  for (int a = 0; a < axis; ++a)
    for (int p = 0; p < tables.m_pairs; ++p) {
      double dz = prefix[a] - tables.mid(p, a);
      c[p] *= std::exp(-2.0 * model.bandwidth[a] * dz * dz);
    }
  for (int a = axis + 1; a < model.dim(); ++a)
    for (int p = 0; p < tables.m_pairs; ++p) c[p] *= tables.box_int(p, a);

  double z = tables.partial_cdf(c, axis, model.domain.upper[axis]);
  if (!(z > 0.0)) throw std::runtime_error("cdf_1d: nonpositive conditional normalizer");
  return std::min(1.0, std::max(0.0, tables.partial_cdf(c, axis, x) / z));
}

/// Draw i.i.d. samples by sequential-coordinate inverse-CDF bisection on the
/// model's closed-form box marginals. Requires a model normalized on its box.
/// Samples use counter-based per-index streams, so the batch is reproducible
/// for any worker count.
inline SampleBatch sample(const GaussianPsdModel& model, const SamplerConfig& cfg,
                          double t0_metadata = 0.0, const std::string& fingerprint = "") {
  cfg.validate();
  if (model.has_time)
    throw std::invalid_argument("sample: condition the model on a time slice first");
  double mass = total_mass(model, Domain::kBox);
  if (std::abs(mass - 1.0) > 1e-6)
    throw std::invalid_argument("sample: model must be normalized on its box (mass=" +
                                format_real(mass) + ")");
  if (!model.is_psd_within_tolerance())
    throw std::invalid_argument("sample: coefficient matrix violates the PSD tolerance");

  const int d = model.dim();
  detail::SamplerTables tables(model);

  SampleBatch batch;
  batch.points.resize(cfg.n_samples, d);
  batch.t0 = t0_metadata;
  batch.seed = cfg.seed;
  batch.eps = cfg.eps;
  batch.model_fingerprint =
      fingerprint.empty() ? model_fingerprint(serialize_model(model)) : fingerprint;

  const double target_width = cfg.eps / d;
  std::vector<int> max_bisect(std::max(cfg.n_samples, 1), 0);
  std::vector<long> total_bisect(std::max(cfg.n_samples, 1), 0);

  parallel_indices(cfg.n_samples, [&](std::int64_t n) {
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(n));
    VectorXd running = tables.coeff;
    for (int axis = 0; axis < d; ++axis) {
      VectorXd c = running;
      for (int a = axis + 1; a < d; ++a)
        for (int p = 0; p < tables.m_pairs; ++p) c[p] *= tables.box_int(p, a);

      double z = tables.partial_cdf(c, axis, model.domain.upper[axis]);
      if (!(z > 0.0))
        throw std::runtime_error(
            "sample: nonpositive conditional normalizer at sample " + std::to_string(n) +
            " axis " + std::to_string(axis) + " (PSD slack turned the density negative)");

      double u = rng.uniform();
      double target = u * z;
      double lo = model.domain.lower[axis], hi = model.domain.upper[axis];
      int steps = 0;
      while (hi - lo > target_width) {
        double mid = 0.5 * (lo + hi);
        double f = tables.partial_cdf(c, axis, mid);
        ++steps;
        if (std::abs(f - target) <= 1e-15 * z) {
          lo = hi = mid;
          break;
        }
        if (f < target)
          lo = mid;
        else
          hi = mid;
      }
      double x = 0.5 * (lo + hi);
      batch.points(n, axis) = x;
      max_bisect[n] = std::max(max_bisect[n], steps);
      total_bisect[n] += steps;

      if (axis + 1 < d)
        for (int p = 0; p < tables.m_pairs; ++p) {
          double dz = x - tables.mid(p, axis);
          running[p] *= std::exp(-2.0 * model.bandwidth[axis] * dz * dz);
        }
    }
  });

  for (int n = 0; n < cfg.n_samples; ++n) {
    batch.max_bisections_per_coordinate =
        std::max(batch.max_bisections_per_coordinate, max_bisect[n]);
    batch.total_bisections += total_bisect[n];
  }
  return batch;
}

}  // namespace psdfp
