#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "psdfp/common.hpp"
#include "psdfp/gaussian_algebra.hpp"

namespace psdfp {

inline constexpr int kModelFormatVersion = 1;

/// Relative floor for "PSD within tolerance": lambda_min >= -tol * lambda_max.
inline constexpr double kPsdTolerance = 1e-10;

/// Gaussian kernel matrix K(i, j) = exp(-sum_a eta_a (X(i,a) - Y(j,a))^2).
inline MatrixXd kernel_matrix(const MatrixXd& x, const MatrixXd& y, const VectorXd& eta) {
  if (x.cols() != y.cols() || eta.size() != x.cols())
    throw std::invalid_argument("kernel_matrix: dimension mismatch");
  MatrixXd k(x.rows(), y.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < y.rows(); ++j) {
      double e = 0.0;
      for (int a = 0; a < x.cols(); ++a) {
        double dz = x(i, a) - y(j, a);
        e += eta[a] * dz * dz;
      }
      k(i, j) = std::exp(-e);
    }
  return k;
}

/// Density model f(z) = psi(z)^T A psi(z) with psi_i(z) = k_eta(base_i, z).
/// Nonnegative whenever A is PSD. For space-time models the last axis is time.
struct GaussianPsdModel {
  MatrixXd base_points;  // m x D
  MatrixXd coeff;        // m x m, symmetric PSD
  VectorXd bandwidth;    // D, positive
  Box domain;            // D axes
  bool has_time = false;

  int size() const { return static_cast<int>(base_points.rows()); }
  int dim() const { return static_cast<int>(base_points.cols()); }
  int space_dim() const { return has_time ? dim() - 1 : dim(); }

  VectorXd feature_vector(const VectorXd& z) const {
    if (z.size() != dim()) throw std::invalid_argument("GaussianPsdModel: point dimension mismatch");
    VectorXd psi(size());
    for (int i = 0; i < size(); ++i) {
      double e = 0.0;
      for (int a = 0; a < dim(); ++a) {
        double dz = z[a] - base_points(i, a);
        e += bandwidth[a] * dz * dz;
      }
      psi[i] = std::exp(-e);
    }
    return psi;
  }

  void validate() const {
    if (coeff.rows() != size() || coeff.cols() != size())
      throw std::invalid_argument("GaussianPsdModel: coefficient size mismatch");
    if (bandwidth.size() != dim() || domain.dim() != dim())
      throw std::invalid_argument("GaussianPsdModel: bandwidth/domain dimension mismatch");
    for (int a = 0; a < dim(); ++a)
      if (!(bandwidth[a] > 0.0))
        throw std::invalid_argument("GaussianPsdModel: bandwidth must be positive");
    double scale = coeff.cwiseAbs().maxCoeff();
    if ((coeff - coeff.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300))
      throw std::invalid_argument("GaussianPsdModel: coefficient matrix not symmetric");
  }

  /// (lambda_min, lambda_max) of the coefficient matrix.
  std::pair<double, double> coeff_eigen_range() const {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(coeff, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("GaussianPsdModel: eigensolver failed");
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  }

  bool is_psd_within_tolerance() const {
    auto [lo, hi] = coeff_eigen_range();
    return lo >= -kPsdTolerance * std::max(hi, 0.0) - 1e-300;
  }
};

inline double evaluate(const GaussianPsdModel& model, const VectorXd& z) {
  VectorXd psi = model.feature_vector(z);
  return psi.dot(model.coeff * psi);
}

namespace detail {

/// Per-pair integral factor over one axis: integral of
/// k_eta(xi, z) k_eta(xj, z) dz over the line or a segment.
inline double pair_axis_integral(double eta, double xi, double xj, const double* lo,
                                 const double* hi) {
  double d = xi - xj;
  double sep = std::exp(-0.5 * eta * d * d);
  double mid = 0.5 * (xi + xj);
  if (!lo) return sep * std::sqrt(M_PI / (2.0 * eta));
  double r = std::sqrt(2.0 * eta);
  return sep * 0.5 * std::sqrt(M_PI / (2.0 * eta)) *
         (std::erf(r * (*hi - mid)) - std::erf(r * (*lo - mid)));
}

}  // namespace detail

/// Total integral of the model. Full space realizes the sum rule
/// c_{2 eta} Tr(A K_{X,X,eta/2}); the box version swaps in erf factors.
inline double total_mass(const GaussianPsdModel& model, Domain domain) {
  const int m = model.size();
  double mass = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double f = model.coeff(i, j);
      if (f == 0.0) continue;
      for (int a = 0; a < model.dim(); ++a)
        f *= detail::pair_axis_integral(model.bandwidth[a], model.base_points(i, a),
                                        model.base_points(j, a),
                                        domain == Domain::kBox ? &model.domain.lower[a] : nullptr,
                                        domain == Domain::kBox ? &model.domain.upper[a] : nullptr);
      mass += f;
    }
  return mass;
}

/// Integrate out the listed axes. The coefficient matrix picks up a Hadamard
/// factor of per-pair axis integrals, which is itself a Gram matrix, so the
/// result stays PSD; this is verified numerically and logged if violated.
inline GaussianPsdModel marginalize_dims(const GaussianPsdModel& model,
                                         const std::vector<int>& dims, Domain domain) {
  const int dim = model.dim();
  if (dims.empty()) throw std::invalid_argument("marginalize_dims: empty axis set");
  std::vector<bool> drop(dim, false);
  for (int a : dims) {
    if (a < 0 || a >= dim) throw std::invalid_argument("marginalize_dims: axis out of range");
    if (drop[a]) throw std::invalid_argument("marginalize_dims: repeated axis");
    drop[a] = true;
  }
  if (static_cast<int>(dims.size()) == dim)
    throw std::invalid_argument("marginalize_dims: cannot marginalize every axis; use total_mass");

  const int m = model.size();
  MatrixXd factor = MatrixXd::Ones(m, m);
  for (int a = 0; a < dim; ++a) {
    if (!drop[a]) continue;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j <= i; ++j) {
        double f = detail::pair_axis_integral(
            model.bandwidth[a], model.base_points(i, a), model.base_points(j, a),
            domain == Domain::kBox ? &model.domain.lower[a] : nullptr,
            domain == Domain::kBox ? &model.domain.upper[a] : nullptr);
        factor(i, j) *= f;
        if (i != j) factor(j, i) *= f;
      }
  }

  std::vector<int> keep;
  for (int a = 0; a < dim; ++a)
    if (!drop[a]) keep.push_back(a);

  GaussianPsdModel out;
  out.coeff = model.coeff.cwiseProduct(factor);
  out.base_points.resize(m, keep.size());
  out.bandwidth.resize(keep.size());
  for (size_t k = 0; k < keep.size(); ++k) {
    out.base_points.col(k) = model.base_points.col(keep[k]);
    out.bandwidth[k] = model.bandwidth[keep[k]];
  }
  out.domain = model.domain.restrict_axes(keep);
  out.has_time = model.has_time && !drop[dim - 1];

  if (!out.is_psd_within_tolerance()) {
    auto [lo, hi] = out.coeff_eigen_range();
    PSDFP_LOG_WARN("marginalize_dims: coefficient matrix left PSD tolerance (min %.3e, max %.3e)",
                   lo, hi);
  }
  return out;
}

/// Fix the time coordinate: A -> A o (tau tau^T) with tau_i = k_T(t_i, t0).
/// Exact: evaluate(result, x) == evaluate(model, (x, t0)).
inline GaussianPsdModel condition_time(const GaussianPsdModel& model, double t0) {
  if (!model.has_time) throw std::invalid_argument("condition_time: model has no time axis");
  const int time_axis = model.dim() - 1;
  if (t0 < model.domain.lower[time_axis] || t0 > model.domain.upper[time_axis])
    PSDFP_LOG_WARN("condition_time: t0=%.6g outside the time box [%.6g, %.6g]; extrapolating", t0,
                   model.domain.lower[time_axis], model.domain.upper[time_axis]);
  const int m = model.size();
  VectorXd tau(m);
  for (int i = 0; i < m; ++i) {
    double dt = model.base_points(i, time_axis) - t0;
    tau[i] = std::exp(-model.bandwidth[time_axis] * dt * dt);
  }
  GaussianPsdModel out;
  out.coeff = model.coeff.cwiseProduct(tau * tau.transpose());
  out.base_points = model.base_points.leftCols(time_axis);
  out.bandwidth = model.bandwidth.head(time_axis);
  std::vector<int> keep(time_axis);
  for (int a = 0; a < time_axis; ++a) keep[a] = a;
  out.domain = model.domain.restrict_axes(keep);
  out.has_time = false;
  return out;
}

/// Rescale so the model integrates to 1 on its box; with t0, condition on time
/// first and normalize the spatial slice.
inline GaussianPsdModel normalize(const GaussianPsdModel& model,
                                  std::optional<double> t0 = std::nullopt) {
  GaussianPsdModel out = t0 ? condition_time(model, *t0) : model;
  double mass = total_mass(out, Domain::kBox);
  if (!(mass > 0.0)) throw std::runtime_error("normalize: nonpositive mass, fit is degenerate");
  out.coeff /= mass;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: versioned JSON, reals at 17 significant digits. An optional
// "metadata" object travels with the file and is ignored on load.

inline std::string serialize_model(const GaussianPsdModel& model,
                                   const std::string& metadata_json = "") {
  model.validate();
  const int m = model.size(), dim = model.dim();
  std::ostringstream out;
  auto reals = [&out](const char* key, const std::vector<double>& values, int indent) {
    for (int s = 0; s < indent; ++s) out << ' ';
    out << '"' << key << "\": [";
    for (size_t k = 0; k < values.size(); ++k) {
      if (k) out << ", ";
      out << format_real(values[k]);
    }
    out << ']';
  };
  std::vector<double> eta(model.bandwidth.data(), model.bandwidth.data() + dim);
  std::vector<double> points, tri, lo, hi;
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < dim; ++a) points.push_back(model.base_points(i, a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j) tri.push_back(model.coeff(i, j));
  for (int a = 0; a < dim; ++a) {
    lo.push_back(model.domain.lower[a]);
    hi.push_back(model.domain.upper[a]);
  }
  out << "{\n";
  out << "  \"format_version\": " << kModelFormatVersion << ",\n";
  out << "  \"dim_space\": " << model.space_dim() << ",\n";
  out << "  \"has_time\": " << (model.has_time ? "true" : "false") << ",\n";
  out << "  \"m\": " << m << ",\n";
  reals("eta", eta, 2);
  out << ",\n";
  reals("base_points", points, 2);
  out << ",\n";
  reals("coeff_lower_triangle", tri, 2);
  out << ",\n";
  out << "  \"domain\": {\n";
  reals("lower", lo, 4);
  out << ",\n";
  reals("upper", hi, 4);
  out << "\n  }";
  if (!metadata_json.empty()) out << ",\n  \"metadata\": " << metadata_json;
  out << "\n}\n";
  return out.str();
}

inline void save_model(const GaussianPsdModel& model, const std::string& path,
                       const std::string& metadata_json = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << serialize_model(model, metadata_json);
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

inline GaussianPsdModel parse_model(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format_version") || j["format_version"].get<int>() != kModelFormatVersion)
    throw std::runtime_error("model file: unsupported format_version");
  const int d = j.at("dim_space").get<int>();
  const bool has_time = j.at("has_time").get<bool>();
  const int m = j.at("m").get<int>();
  const int dim = d + (has_time ? 1 : 0);
  if (m < 1 || d < 1) throw std::runtime_error("model file: invalid sizes");

  auto load_reals = [&](const nlohmann::json& arr, int expected) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != expected)
      throw std::runtime_error("model file: array size mismatch");
    VectorXd v(expected);
    for (int k = 0; k < expected; ++k) v[k] = arr[k].get<double>();
    return v;
  };

  GaussianPsdModel model;
  model.has_time = has_time;
  model.bandwidth = load_reals(j.at("eta"), dim);
  VectorXd flat = load_reals(j.at("base_points"), m * dim);
  model.base_points.resize(m, dim);
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < dim; ++a) model.base_points(i, a) = flat[i * dim + a];
  VectorXd tri = load_reals(j.at("coeff_lower_triangle"), m * (m + 1) / 2);
  model.coeff.resize(m, m);
  int k = 0;
  for (int i = 0; i < m; ++i)
    for (int jj = 0; jj <= i; ++jj, ++k) model.coeff(i, jj) = model.coeff(jj, i) = tri[k];
  model.domain = Box(load_reals(j.at("domain").at("lower"), dim),
                     load_reals(j.at("domain").at("upper"), dim));
  model.validate();
  if (!model.is_psd_within_tolerance())
    throw std::runtime_error("model file: coefficient matrix violates the PSD tolerance");
  return model;
}

inline GaussianPsdModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

/// Fingerprint of the serialized form (or of a file's bytes).
inline std::string model_fingerprint(const std::string& serialized) {
  return hex64(fnv1a64(serialized.data(), serialized.size()));
}

}  // namespace psdfp
