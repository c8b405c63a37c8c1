#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psdfp/common.hpp"
#include "psdfp/frac_ops.hpp"
#include "psdfp/psd_model.hpp"
#include "psdfp/psd_solver.hpp"
#include "psdfp/quadrature.hpp"
#include "psdfp/run_config.hpp"
#include "psdfp/sampler.hpp"
#include "psdfp/sde_lab.hpp"

namespace psdfp {

/// The fitted or loaded model cannot produce a usable density (CLI exit 3).
struct DegenerateModel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fit hit max_iters without meeting the stopping rule (CLI exit 2).
struct NotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Base-point layout and the default bandwidth rule.

struct BasePointLayout {
  MatrixXd points;        // m x D
  VectorXd eta;           // D
  std::vector<int> shape;  // grid only
};

namespace pipedetail {

/// Split m into per-axis grid counts with balanced per-length point density.
inline std::vector<int> balanced_grid_shape(int m, const Box& box) {
  const int dims = box.dim();
  std::vector<int> best(dims, 1);
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<int> shape(dims, 1);
  std::function<void(int, int)> recurse = [&](int axis, int rest) {
    if (axis == dims - 1) {
      shape[axis] = rest;
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (int a = 0; a < dims; ++a) {
        double density = shape[a] / box.width(a);
        lo = std::min(lo, density);
        hi = std::max(hi, density);
      }
      double score = hi / lo;
      if (score < best_score) {
        best_score = score;
        best = shape;
      }
      return;
    }
    for (int n = 1; n <= rest; ++n) {
      if (rest % n) continue;
      shape[axis] = n;
      recurse(axis + 1, rest / n);
    }
  };
  recurse(0, m);
  return best;
}

/// Cell midpoints on space axes; endpoint-inclusive nodes on the time axis
/// (the last one), so base functions sit on the t = 0 slice that carries the
/// initial condition.
inline MatrixXd grid_points(const std::vector<int>& shape, const Box& box) {
  const int dims = box.dim();
  int total = 1;
  for (int n : shape) total *= n;
  MatrixXd pts(total, dims);
  std::vector<int> idx(dims, 0);
  for (int k = 0; k < total; ++k) {
    for (int a = 0; a < dims; ++a) {
      bool time_axis = (a == dims - 1);
      pts(k, a) = time_axis && shape[a] > 1
                      ? box.lower[a] + box.width(a) * idx[a] / (shape[a] - 1.0)
                      : box.lower[a] + box.width(a) * (idx[a] + 0.5) / shape[a];
    }
    for (int a = 0; a < dims; ++a) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return pts;
}

}  // namespace pipedetail

/// Base points and the bandwidth rule eta_a = (n_a / width_a)^2, where n_a is
/// the per-axis grid count (or m^(1/D) for scattered layouts). For stable
/// noise the spatial bandwidth is made isotropic (geometric mean), as the
/// fractional estimator requires.
inline BasePointLayout make_base_points(const RunConfig& cfg, int m) {
  Box box = cfg.space_time_box();
  const int dims = box.dim();
  BasePointLayout layout;
  if (cfg.layout == BaseLayout::kGrid) {
    layout.shape = (static_cast<int>(cfg.grid_shape.size()) == dims && m == cfg.m)
                       ? cfg.grid_shape
                       : pipedetail::balanced_grid_shape(m, box);
    layout.points = pipedetail::grid_points(layout.shape, box);
  } else {
    ScrambledHalton seq(dims, cfg.layout_seed);
    layout.points = seq.points_in_box(m, box);
  }

  layout.eta.resize(dims);
  for (int a = 0; a < dims; ++a) {
    double n_axis = layout.shape.empty() ? std::pow(static_cast<double>(m), 1.0 / dims)
                                         : static_cast<double>(layout.shape[a]);
    // Inclusive time grids have spacing width/(n-1); bandwidth 1/spacing^2.
    if (a == dims - 1 && !layout.shape.empty() && layout.shape[a] > 1) n_axis -= 1.0;
    double ratio = n_axis / box.width(a);
    layout.eta[a] = ratio * ratio;
  }
  if (cfg.eta_override.size() == dims) layout.eta = cfg.eta_override;

  if (cfg.problem.noise == NoiseKind::kStable && cfg.problem.dim > 1) {
    double log_mean = 0.0;
    for (int a = 0; a < cfg.problem.dim; ++a) log_mean += std::log(layout.eta[a]);
    double iso = std::exp(log_mean / cfg.problem.dim);
    for (int a = 0; a < cfg.problem.dim; ++a) layout.eta[a] = iso;
  }
  return layout;
}

/// Drift expansion for the assembly: either the configured RKHS expansion or a
/// kernel-ridge fit of the analytic linear drift on a padded grid.
inline RkhsDrift assembly_drift(const RunConfig& cfg) {
  if (cfg.problem.rkhs_drift) return *cfg.problem.rkhs_drift;

  const int d = cfg.problem.dim;
  VectorXd lo(d + 1), hi(d + 1);
  for (int a = 0; a < d; ++a) {
    lo[a] = -cfg.radius - cfg.drift_fit.padding;
    hi[a] = cfg.radius + cfg.drift_fit.padding;
  }
  lo[d] = 0.0;
  hi[d] = cfg.problem.horizon;
  Box fit_box(lo, hi);

  std::vector<int> nodes = cfg.drift_fit.nodes_per_axis;
  if (nodes.empty()) {
    nodes.assign(d + 1, 12);
    nodes[d] = 1;  // analytic drifts here are time-independent
  }
  VectorXd gamma = cfg.drift_fit.gamma;
  if (gamma.size() != d + 1) {
    gamma.resize(d + 1);
    for (int a = 0; a < d; ++a) gamma[a] = 1.0 / (fit_box.width(a) * fit_box.width(a));
    gamma[d] = 1e-8;
  }
  VectorXd theta = *cfg.problem.linear_theta;
  RkhsDrift drift = fit_rkhs_drift(
      [&](const VectorXd& z) {
        return VectorXd(-theta.cwiseProduct(z.head(d)));
      },
      d, fit_box, nodes, gamma, cfg.drift_fit.ridge, cfg.drift_fit.max_coefficient);

  DriftBounds bounds = drift_bounds(drift, cfg.space_time_box(), 17);
  PSDFP_LOG_INFO("drift fit: centers=%d max|mu|=%.4g max|d mu/dx|=%.4g", drift.num_centers(),
                 bounds.max_value, bounds.max_divergence_term);
  return drift;
}

// ---------------------------------------------------------------------------

struct FitOutcome {
  GaussianPsdModel model;
  FitReport report;
  int pair_count = 0;
  long term_count = 0;
};

inline ResidualProblem assemble_from_config(const RunConfig& cfg, const BasePointLayout& layout,
                                            const RkhsDrift& drift) {
  Box box = cfg.space_time_box();
  if (cfg.problem.noise == NoiseKind::kBrownian)
    return assemble_fpe(layout.points, layout.eta, &drift, cfg.problem.diffusion, cfg.problem.p0,
                        box, cfg.assembly);

  FracOrder order(0.5 * cfg.problem.alpha);
  int pairs = static_cast<int>(layout.points.rows() * (layout.points.rows() + 1) / 2);
  int n_nodes = cfg.collocation_count > 0 ? cfg.collocation_count : 50 * pairs;
  ScrambledHalton seq(box.dim(), cfg.collocation_seed);
  MatrixXd colloc = seq.points_in_box(n_nodes, box);
  VectorXd weights = VectorXd::Constant(n_nodes, box.volume() / n_nodes);
  FrozenEstimator est = FrozenEstimator::create(cfg.mc_seed, cfg.n_mc, cfg.problem.dim);
  return assemble_frac_fpe(layout.points, layout.eta, &drift, order, cfg.problem.p0, box, colloc,
                           weights, est, cfg.assembly);
}

inline FitOutcome run_fit(const RunConfig& cfg, int m_override = -1) {
  const int m = m_override > 0 ? m_override : cfg.m;
  BasePointLayout layout = make_base_points(cfg, m);
  RkhsDrift drift = assembly_drift(cfg);
  ResidualProblem problem = assemble_from_config(cfg, layout, drift);

  auto [coeff, report] = solve(problem, cfg.solver);

  FitOutcome out;
  out.model.base_points = layout.points;
  out.model.coeff = project_psd(coeff);  // clear eigensolver-level negatives
  out.model.bandwidth = layout.eta;
  out.model.domain = cfg.space_time_box();
  out.model.has_time = true;
  out.report = report;
  out.pair_count = problem.pair_count();
  out.term_count = problem.term_count;
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts. Reruns with the same config are byte-identical: no timestamps.

inline void ensure_directory(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline std::string fit_metadata_json(const RunConfig& cfg, const FitReport& report) {
  std::ostringstream out;
  out << "{\"report\": " << report.to_json() << ", \"config_hash\": \"" << cfg.config_hash
      << "\", \"seeds\": {\"mc\": " << cfg.mc_seed << ", \"collocation\": " << cfg.collocation_seed
      << ", \"layout\": " << cfg.layout_seed << ", \"power\": " << cfg.solver.power_seed
      << ", \"sampler\": " << cfg.sampler.seed << "}}";
  return out.str();
}

inline void write_samples_csv(const std::string& path, const SampleBatch& batch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "# model=" << batch.model_fingerprint << " t0=" << format_real(batch.t0)
      << " seed=" << batch.seed << " eps=" << format_real(batch.eps) << "\n";
  for (int n = 0; n < batch.points.rows(); ++n) {
    for (int a = 0; a < batch.points.cols(); ++a) {
      if (a) out << ",";
      out << format_real(batch.points(n, a));
    }
    out << "\n";
  }
}

struct MetricRow {
  double key;  // time or m
  std::string metric;
  double value;
};

inline void write_metrics_csv(const std::string& path, const std::string& header_comment,
                              const std::string& key_name, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "# " << header_comment << "\n";
  out << key_name << ",metric,value\n";
  for (const auto& row : rows)
    out << format_real(row.key) << "," << row.metric << "," << format_real(row.value) << "\n";
}

// ---------------------------------------------------------------------------
// Commands. Each returns artifacts on disk; exceptions map to CLI exit codes.

inline std::string cmd_fit(const RunConfig& cfg, const std::string& out_dir, bool dry_run) {
  if (dry_run) {
    int m = cfg.m;
    int pairs = m * (m + 1) / 2;
    BasePointLayout layout = make_base_points(cfg, m);
    RkhsDrift drift = assembly_drift(cfg);
    long local_terms =
        static_cast<long>(pairs) *
        (1 + (cfg.problem.noise == NoiseKind::kBrownian ? 1 : 0) +
         cfg.problem.dim * drift.num_centers());
    std::printf("dry-run: m=%d pairs=%d operator_terms~%ld gram_entries=%ld\n", m, pairs,
                local_terms, static_cast<long>(pairs) * pairs);
    if (cfg.problem.noise == NoiseKind::kStable) {
      int nodes = cfg.collocation_count > 0 ? cfg.collocation_count : 50 * pairs;
      std::printf("dry-run: collocation_nodes=%d n_mc=%d\n", nodes, cfg.n_mc);
    }
    return "";
  }

  FitOutcome outcome = run_fit(cfg);
  ensure_directory(out_dir);
  std::string model_path = out_dir + "/model.json";
  save_model(outcome.model, model_path, fit_metadata_json(cfg, outcome.report));
  std::ofstream report_out(out_dir + "/fit_report.json", std::ios::binary);
  report_out << outcome.report.to_json() << "\n";
  PSDFP_LOG_INFO("fit: wrote %s (pairs=%d terms=%ld wall=%.1fs)", model_path.c_str(),
                 outcome.pair_count, outcome.term_count, outcome.report.wall_seconds);
  if (!outcome.report.converged) throw NotConverged("fit stopped at max_iters");
  return model_path;
}

inline GaussianPsdModel load_model_for_command(const RunConfig& cfg, const std::string& out_dir,
                                               std::string* fingerprint) {
  std::string path =
      cfg.sample_model_path.empty() ? out_dir + "/model.json" : cfg.sample_model_path;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (fingerprint) *fingerprint = model_fingerprint(buf.str());
  return parse_model(buf.str());
}

inline std::string cmd_sample(const RunConfig& cfg, const std::string& out_dir) {
  std::string fingerprint;
  GaussianPsdModel model = load_model_for_command(cfg, out_dir, &fingerprint);
  GaussianPsdModel slice;
  try {
    slice = model.has_time ? normalize(model, cfg.sample_t0) : normalize(model);
  } catch (const std::runtime_error& e) {
    throw DegenerateModel(e.what());
  }
  SampleBatch batch;
  try {
    batch = sample(slice, cfg.sampler, cfg.sample_t0, fingerprint);
  } catch (const std::runtime_error& e) {
    throw DegenerateModel(e.what());
  }
  ensure_directory(out_dir);
  std::ostringstream name;
  name << out_dir << "/samples_t" << format_real(cfg.sample_t0) << ".csv";
  write_samples_csv(name.str(), batch);
  PSDFP_LOG_INFO("sample: wrote %s (n=%d max_bisect=%d)", name.str().c_str(),
                 static_cast<int>(batch.points.rows()), batch.max_bisections_per_coordinate);
  return name.str();
}

/// Analytic OU oracle availability: linear drift, isotropic Brownian noise,
/// single-component Gaussian initial density.
inline bool has_ou_oracle(const SdeProblem& problem) {
  if (!problem.linear_theta || problem.noise != NoiseKind::kBrownian) return false;
  if (problem.p0.components() != 1) return false;
  const MatrixXd& diff = problem.diffusion;
  double d0 = diff(0, 0);
  return (diff - d0 * MatrixXd::Identity(diff.rows(), diff.cols())).cwiseAbs().maxCoeff() <=
         1e-12 * std::max(1.0, std::abs(d0));
}

inline OuMarginal ou_oracle(const SdeProblem& problem, double t) {
  double sigma = std::sqrt(2.0 * problem.diffusion(0, 0));
  VectorXd mean0 = problem.p0.means.row(0).transpose();
  VectorXd var0(problem.dim);
  for (int a = 0; a < problem.dim; ++a) var0[a] = 0.5 / problem.p0.precisions(0, a);
  return analytic_ou(*problem.linear_theta, sigma, mean0, var0, t);
}

struct ValidationResult {
  std::vector<MetricRow> rows;
  double l2_at(double t) const { return at(t, "l2_error"); }
  double w1_at(double t) const { return at(t, "w1"); }
  double mass_drift_at(double t) const { return at(t, "mass_drift"); }
  double at(double t, const std::string& metric) const {
    for (const auto& row : rows)
      if (row.metric == metric && std::abs(row.key - t) < 1e-12) return row.value;
    throw std::runtime_error("metric not recorded: " + metric);
  }
};

inline ValidationResult validate_model(const RunConfig& cfg, const GaussianPsdModel& model,
                                       const std::string& fingerprint,
                                       const std::vector<double>& times) {
  if (times.empty()) throw ConfigError("validate.times", "at least one time required");
  const SdeProblem& problem = cfg.problem;
  const bool oracle = has_ou_oracle(problem);

  // One simulation pass for all requested times when no oracle is available.
  std::vector<MatrixXd> baseline;
  if (!oracle) {
    if (problem.noise == NoiseKind::kBrownian)
      baseline = euler_maruyama(problem, cfg.baseline_paths, cfg.baseline_steps,
                                cfg.baseline_seed, times);
    else
      baseline = stable_euler(problem, cfg.baseline_paths, cfg.baseline_steps, cfg.baseline_seed,
                              times);
  }

  ValidationResult result;
  for (size_t k = 0; k < times.size(); ++k) {
    double t = times[k];
    GaussianPsdModel conditioned = model.has_time ? condition_time(model, t) : model;
    double mass = total_mass(conditioned, Domain::kBox);
    result.rows.push_back({t, "mass_drift", std::abs(mass - 1.0)});
    if (!(mass > 0.0)) throw DegenerateModel("nonpositive mass at t=" + format_real(t));
    GaussianPsdModel normalized = conditioned;
    normalized.coeff /= mass;

    if (oracle && problem.dim <= 2) {
      OuMarginal marginal = ou_oracle(problem, t);
      auto reference = [&](const VectorXd& x) {
        double v = 1.0;
        for (int a = 0; a < problem.dim; ++a)
          v *= std::exp(-0.5 * (x[a] - marginal.mean[a]) * (x[a] - marginal.mean[a]) /
                        marginal.variance[a]) /
               std::sqrt(2.0 * M_PI * marginal.variance[a]);
        return v;
      };
      result.rows.push_back(
          {t, "l2_error", l2_density_error(conditioned, reference, conditioned.domain)});
    }

    SamplerConfig sampler_cfg = cfg.sampler;
    sampler_cfg.n_samples = cfg.validate_samples;
    SampleBatch batch;
    try {
      batch = sample(normalized, sampler_cfg, t, fingerprint);
    } catch (const std::runtime_error& e) {
      throw DegenerateModel(e.what());
    }

    double w1 = 0.0;
    if (oracle && problem.dim == 1) {
      OuMarginal marginal = ou_oracle(problem, t);
      double mu = marginal.mean[0], sd = std::sqrt(marginal.variance[0]);
      std::vector<double> xs(batch.points.data(), batch.points.data() + batch.points.rows());
      w1 = wasserstein1_vs_quantile(xs, [&](double u) { return mu + sd * normal_quantile(u); });
    } else if (oracle) {
      // Sample the analytic marginal for a sliced comparison.
      OuMarginal marginal = ou_oracle(problem, t);
      Rng rng(cfg.baseline_seed ^ 0xabcdef12u);
      MatrixXd ref(batch.points.rows(), problem.dim);
      for (int n = 0; n < ref.rows(); ++n)
        for (int a = 0; a < problem.dim; ++a)
          ref(n, a) = marginal.mean[a] + std::sqrt(marginal.variance[a]) * rng.normal();
      w1 = sliced_wasserstein1(batch.points, ref);
    } else {
      const MatrixXd& ref = baseline[k];
      if (problem.dim == 1) {
        std::vector<double> a(batch.points.data(), batch.points.data() + batch.points.rows());
        std::vector<double> b(ref.data(), ref.data() + ref.rows());
        w1 = wasserstein1_1d(a, b);
      } else {
        w1 = sliced_wasserstein1(batch.points, ref);
      }
    }
    result.rows.push_back({t, "w1", w1});
  }
  return result;
}

inline std::string cmd_validate(const RunConfig& cfg, const std::string& out_dir) {
  std::string fingerprint;
  GaussianPsdModel model = load_model_for_command(cfg, out_dir, &fingerprint);
  ValidationResult result = validate_model(cfg, model, fingerprint, cfg.validate_times);
  ensure_directory(out_dir);
  std::string path = out_dir + "/metrics.csv";
  write_metrics_csv(path, "config=" + cfg.config_hash + " model=" + fingerprint +
                              " seed=" + std::to_string(cfg.sampler.seed),
                    "time", result.rows);
  PSDFP_LOG_INFO("validate: wrote %s", path.c_str());
  return path;
}

struct SweepResult {
  std::vector<MetricRow> rows;
  double l2_slope = 0.0;
};

inline SweepResult run_sweep(const RunConfig& cfg) {
  if (cfg.sweep_m_values.size() < 3)
    throw ConfigError("sweep.m_values", "at least 3 sweep points required");
  if (!has_ou_oracle(cfg.problem))
    throw ConfigError("sweep", "sweeps need the analytic oracle (linear drift, Brownian noise)");

  SweepResult result;
  std::vector<double> log_m, log_err;
  for (int m : cfg.sweep_m_values) {
    FitOutcome outcome = run_fit(cfg, m);
    std::string fp = model_fingerprint(serialize_model(outcome.model));
    ValidationResult v = validate_model(cfg, outcome.model, fp, {cfg.sweep_time});
    double l2 = v.l2_at(cfg.sweep_time);
    result.rows.push_back({static_cast<double>(m), "l2_error", l2});
    result.rows.push_back({static_cast<double>(m), "w1", v.w1_at(cfg.sweep_time)});
    result.rows.push_back({static_cast<double>(m), "mass_drift", v.mass_drift_at(cfg.sweep_time)});
    result.rows.push_back({static_cast<double>(m), "pg_certificate",
                           outcome.report.pg_certificate});
    log_m.push_back(std::log(static_cast<double>(m)));
    log_err.push_back(std::log(std::max(l2, 1e-300)));
  }

  // Least-squares slope of log error against log m.
  double n = static_cast<double>(log_m.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t k = 0; k < log_m.size(); ++k) {
    sx += log_m[k];
    sy += log_err[k];
    sxx += log_m[k] * log_m[k];
    sxy += log_m[k] * log_err[k];
  }
  result.l2_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  result.rows.push_back({0.0, "l2_error_loglog_slope", result.l2_slope});
  return result;
}

inline std::string cmd_sweep(const RunConfig& cfg, const std::string& out_dir) {
  SweepResult result = run_sweep(cfg);
  ensure_directory(out_dir);
  std::string path = out_dir + "/sweep.csv";
  write_metrics_csv(path, "config=" + cfg.config_hash + " seed=" +
                              std::to_string(cfg.sampler.seed),
                    "m", result.rows);
  PSDFP_LOG_INFO("sweep: wrote %s (l2 slope %.3f)", path.c_str(), result.l2_slope);
  return path;
}

}  // namespace psdfp
