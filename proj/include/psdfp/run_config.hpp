#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psdfp/common.hpp"
#include "psdfp/drift.hpp"
#include "psdfp/fpe_assembly.hpp"
#include "psdfp/psd_solver.hpp"
#include "psdfp/sampler.hpp"
#include "psdfp/sde_lab.hpp"

namespace psdfp {

/// Configuration problem with the offending field path; the CLI maps this to
/// exit code 1.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& path, const std::string& message)
      : std::runtime_error("config error: " + path + ": " + message) {}
};

namespace cfgdetail {

using nlohmann::json;

inline const json& require(const json& node, const std::string& path, const char* key) {
  auto it = node.find(key);
  if (it == node.end()) throw ConfigError(path + "." + key, "missing required field");
  return *it;
}

inline double get_number(const json& node, const std::string& path) {
  if (!node.is_number()) throw ConfigError(path, "expected a number");
  return node.get<double>();
}

inline int get_int(const json& node, const std::string& path) {
  if (!node.is_number_integer()) throw ConfigError(path, "expected an integer");
  return node.get<int>();
}

inline std::string get_string(const json& node, const std::string& path) {
  if (!node.is_string()) throw ConfigError(path, "expected a string");
  return node.get<std::string>();
}

inline VectorXd get_vector(const json& node, const std::string& path, int expected = -1) {
  if (!node.is_array()) throw ConfigError(path, "expected an array of numbers");
  VectorXd v(node.size());
  for (size_t k = 0; k < node.size(); ++k) v[k] = get_number(node[k], path);
  if (expected >= 0 && v.size() != expected)
    throw ConfigError(path, "expected " + std::to_string(expected) + " entries");
  return v;
}

inline MatrixXd get_matrix(const json& node, const std::string& path) {
  if (!node.is_array() || node.empty()) throw ConfigError(path, "expected an array of rows");
  int cols = -1;
  MatrixXd m;
  for (size_t r = 0; r < node.size(); ++r) {
    VectorXd row = get_vector(node[r], path);
    if (cols < 0) {
      cols = static_cast<int>(row.size());
      m.resize(node.size(), cols);
    } else if (row.size() != cols) {
      throw ConfigError(path, "ragged rows");
    }
    m.row(r) = row.transpose();
  }
  return m;
}

template <typename T>
T get_or(const json& node, const char* key, T fallback) {
  auto it = node.find(key);
  if (it == node.end()) return fallback;
  return it->get<T>();
}

}  // namespace cfgdetail

enum class BaseLayout { kGrid, kHalton };

struct DriftFitConfig {
  std::vector<int> nodes_per_axis;  // defaulted from the problem if empty
  VectorXd gamma;                   // likewise
  double ridge = 1e-13;
  double max_coefficient = 1e4;  // assembly precision guard; see fit_rkhs_drift
  double padding = 1.0;          // spatial padding of the fit grid beyond the box
};

struct RunConfig {
  // problem
  SdeProblem problem;
  double radius = 4.0;

  // model
  int m = 40;
  BaseLayout layout = BaseLayout::kGrid;
  std::vector<int> grid_shape;  // optional explicit per-axis counts
  VectorXd eta_override;        // empty = default bandwidth rule
  std::uint64_t layout_seed = 1;

  // assembly
  AssemblyOptions assembly;
  int collocation_count = 0;  // 0 = 50 * pair count
  std::uint64_t collocation_seed = 11;
  int n_mc = 20000;
  std::uint64_t mc_seed = 1234;
  DriftFitConfig drift_fit;

  // solver
  SolverConfig solver;

  // sampler
  SamplerConfig sampler;

  // command-specific
  double sample_t0 = 0.5;
  std::string sample_model_path;  // empty = <out>/model.json
  std::vector<double> validate_times;
  int validate_samples = 10000;
  int baseline_paths = 100000;
  int baseline_steps = 1000;
  std::uint64_t baseline_seed = 4242;
  std::vector<int> sweep_m_values;
  double sweep_time = 0.5;

  std::string outputs = "runs/out";
  std::string config_hash;  // FNV-1a of the config file bytes

  Box space_time_box() const {
    const int d = problem.dim;
    VectorXd lo(d + 1), hi(d + 1);
    for (int a = 0; a < d; ++a) {
      lo[a] = -radius;
      hi[a] = radius;
    }
    lo[d] = 0.0;
    hi[d] = problem.horizon;
    return Box(lo, hi);
  }
};

inline RunConfig parse_run_config(const std::string& text) {
  using nlohmann::json;
  using namespace cfgdetail;

  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("(file)", std::string("not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("(file)", "expected a JSON object");
  int version = get_or(root, "schema_version", 1);
  if (version != 1) throw ConfigError("schema_version", "unsupported version");

  RunConfig cfg;
  cfg.config_hash = hex64(fnv1a64(text.data(), text.size()));

  // --- problem ---
  const json& problem = require(root, "(file)", "problem");
  cfg.problem.dim = get_int(require(problem, "problem", "dim"), "problem.dim");
  if (cfg.problem.dim < 1 || cfg.problem.dim > 3)
    throw ConfigError("problem.dim", "supported range is 1..3");
  cfg.radius = get_number(require(problem, "problem", "radius"), "problem.radius");
  if (!(cfg.radius > 0.0)) throw ConfigError("problem.radius", "must be positive");
  cfg.problem.horizon = get_number(require(problem, "problem", "horizon"), "problem.horizon");
  if (!(cfg.problem.horizon > 0.0)) throw ConfigError("problem.horizon", "must be positive");
  cfg.problem.space_box = Box(VectorXd::Constant(cfg.problem.dim, -cfg.radius),
                              VectorXd::Constant(cfg.problem.dim, cfg.radius));

  const json& drift = require(problem, "problem", "drift");
  std::string drift_kind = get_string(require(drift, "problem.drift", "kind"),
                                      "problem.drift.kind");
  if (drift_kind == "linear") {
    cfg.problem.linear_theta =
        get_vector(require(drift, "problem.drift", "theta"), "problem.drift.theta",
                   cfg.problem.dim);
    for (int a = 0; a < cfg.problem.dim; ++a)
      if (!((*cfg.problem.linear_theta)[a] > 0.0))
        throw ConfigError("problem.drift.theta", "entries must be positive");
  } else if (drift_kind == "rkhs") {
    RkhsDrift rk;
    rk.centers = get_matrix(require(drift, "problem.drift", "centers"), "problem.drift.centers");
    rk.weights = get_matrix(require(drift, "problem.drift", "weights"), "problem.drift.weights");
    rk.gamma = get_vector(require(drift, "problem.drift", "gamma"), "problem.drift.gamma",
                          cfg.problem.dim + 1);
    if (rk.centers.cols() != cfg.problem.dim + 1)
      throw ConfigError("problem.drift.centers", "columns must be dim + 1 (space-time)");
    if (rk.weights.rows() != cfg.problem.dim)
      throw ConfigError("problem.drift.weights", "one row per spatial component required");
    try {
      rk.validate();
    } catch (const std::exception& e) {
      throw ConfigError("problem.drift", e.what());
    }
    cfg.problem.rkhs_drift = std::move(rk);
  } else {
    throw ConfigError("problem.drift.kind", "expected \"linear\" or \"rkhs\"");
  }

  const json& noise = require(problem, "problem", "noise");
  std::string noise_kind = get_string(require(noise, "problem.noise", "kind"),
                                      "problem.noise.kind");
  if (noise_kind == "brownian") {
    cfg.problem.noise = NoiseKind::kBrownian;
    cfg.problem.diffusion =
        get_matrix(require(noise, "problem.noise", "diffusion"), "problem.noise.diffusion");
    if (cfg.problem.diffusion.rows() != cfg.problem.dim ||
        cfg.problem.diffusion.cols() != cfg.problem.dim)
      throw ConfigError("problem.noise.diffusion", "must be dim x dim");
  } else if (noise_kind == "stable") {
    cfg.problem.noise = NoiseKind::kStable;
    cfg.problem.alpha = get_number(require(noise, "problem.noise", "alpha"),
                                   "problem.noise.alpha");
    if (!(cfg.problem.alpha > 0.0 && cfg.problem.alpha <= 2.0))
      throw ConfigError("problem.noise.alpha", "must lie in (0, 2]");
  } else {
    throw ConfigError("problem.noise.kind", "expected \"brownian\" or \"stable\"");
  }

  const json& p0 = require(problem, "problem", "p0");
  GaussianMixture mix;
  mix.means = get_matrix(require(p0, "problem.p0", "means"), "problem.p0.means");
  MatrixXd variances = get_matrix(require(p0, "problem.p0", "variances"), "problem.p0.variances");
  mix.weights = get_vector(require(p0, "problem.p0", "weights"), "problem.p0.weights");
  if (mix.means.cols() != cfg.problem.dim)
    throw ConfigError("problem.p0.means", "columns must equal dim");
  if (variances.rows() != mix.means.rows() || variances.cols() != mix.means.cols())
    throw ConfigError("problem.p0.variances", "shape must match means");
  mix.precisions.resize(variances.rows(), variances.cols());
  for (int k = 0; k < variances.rows(); ++k)
    for (int a = 0; a < variances.cols(); ++a) {
      if (!(variances(k, a) > 0.0))
        throw ConfigError("problem.p0.variances", "entries must be positive");
      mix.precisions(k, a) = 0.5 / variances(k, a);
    }
  try {
    mix.validate();
  } catch (const std::exception& e) {
    throw ConfigError("problem.p0", e.what());
  }
  cfg.problem.p0 = std::move(mix);
  try {
    cfg.problem.validate();
  } catch (const std::exception& e) {
    throw ConfigError("problem", e.what());
  }

  // --- model ---
  if (auto it = root.find("model"); it != root.end()) {
    const json& model = *it;
    cfg.m = get_or(model, "m", cfg.m);
    if (cfg.m < 1) throw ConfigError("model.m", "must be positive");
    std::string layout = get_or<std::string>(model, "layout", "grid");
    if (layout == "grid")
      cfg.layout = BaseLayout::kGrid;
    else if (layout == "halton")
      cfg.layout = BaseLayout::kHalton;
    else
      throw ConfigError("model.layout", "expected \"grid\" or \"halton\"");
    if (model.contains("grid_shape")) {
      VectorXd shape = get_vector(model["grid_shape"], "model.grid_shape", cfg.problem.dim + 1);
      int prod = 1;
      for (int a = 0; a <= cfg.problem.dim; ++a) {
        cfg.grid_shape.push_back(static_cast<int>(shape[a]));
        if (cfg.grid_shape.back() < 1) throw ConfigError("model.grid_shape", "entries >= 1");
        prod *= cfg.grid_shape.back();
      }
      if (prod != cfg.m) throw ConfigError("model.grid_shape", "product must equal model.m");
    }
    if (model.contains("eta"))
      cfg.eta_override = get_vector(model["eta"], "model.eta", cfg.problem.dim + 1);
    cfg.layout_seed = get_or<std::uint64_t>(model, "layout_seed", cfg.layout_seed);
  }

  // --- assembly ---
  if (auto it = root.find("assembly"); it != root.end()) {
    const json& assembly = *it;
    cfg.assembly.ic_weight = get_or(assembly, "lambda_ic", cfg.assembly.ic_weight);
    cfg.assembly.mass_weight = get_or(assembly, "lambda_mass", cfg.assembly.mass_weight);
    if (cfg.assembly.ic_weight < 0.0 || cfg.assembly.mass_weight < 0.0)
      throw ConfigError("assembly", "penalty weights must be nonnegative");
    std::string domain = get_or<std::string>(assembly, "residual_domain", "time_box");
    if (domain == "full_space")
      cfg.assembly.residual_domain = Domain::kFullSpace;
    else if (domain == "box")
      cfg.assembly.residual_domain = Domain::kBox;
    else if (domain == "time_box")
      cfg.assembly.residual_domain = Domain::kTimeBox;
    else
      throw ConfigError("assembly.residual_domain",
                        "expected \"full_space\", \"box\" or \"time_box\"");
    cfg.assembly.coeff_ridge_rel = get_or(assembly, "coeff_ridge", cfg.assembly.coeff_ridge_rel);
    if (cfg.assembly.coeff_ridge_rel < 0.0)
      throw ConfigError("assembly.coeff_ridge", "must be nonnegative");
    cfg.collocation_count = get_or(assembly, "collocation_count", cfg.collocation_count);
    cfg.collocation_seed = get_or<std::uint64_t>(assembly, "collocation_seed",
                                                 cfg.collocation_seed);
    cfg.n_mc = get_or(assembly, "n_mc", cfg.n_mc);
    if (cfg.n_mc < 2) throw ConfigError("assembly.n_mc", "must be at least 2");
    cfg.mc_seed = get_or<std::uint64_t>(assembly, "mc_seed", cfg.mc_seed);
    if (auto df = assembly.find("drift_fit"); df != assembly.end()) {
      if (df->contains("nodes_per_axis")) {
        VectorXd nodes = get_vector((*df)["nodes_per_axis"], "assembly.drift_fit.nodes_per_axis",
                                    cfg.problem.dim + 1);
        for (int a = 0; a <= cfg.problem.dim; ++a)
          cfg.drift_fit.nodes_per_axis.push_back(static_cast<int>(nodes[a]));
      }
      if (df->contains("gamma"))
        cfg.drift_fit.gamma = get_vector((*df)["gamma"], "assembly.drift_fit.gamma",
                                         cfg.problem.dim + 1);
      cfg.drift_fit.ridge = get_or(*df, "ridge", cfg.drift_fit.ridge);
      cfg.drift_fit.max_coefficient =
          get_or(*df, "max_coefficient", cfg.drift_fit.max_coefficient);
      cfg.drift_fit.padding = get_or(*df, "padding", cfg.drift_fit.padding);
    }
  }

  // --- solver ---
  if (auto it = root.find("solver"); it != root.end()) {
    const json& solver = *it;
    std::string method = get_or<std::string>(solver, "method", "pag");
    if (method == "pag")
      cfg.solver.method = SolverMethod::kProjectedAcceleratedGradient;
    else if (method == "factored")
      cfg.solver.method = SolverMethod::kFactoredDescent;
    else
      throw ConfigError("solver.method", "expected \"pag\" or \"factored\"");
    cfg.solver.max_iters = get_or(solver, "max_iters", cfg.solver.max_iters);
    cfg.solver.rel_tol = get_or(solver, "rel_tol", cfg.solver.rel_tol);
    cfg.solver.rank_cap = get_or(solver, "rank_cap", cfg.solver.rank_cap);
    cfg.solver.power_seed = get_or<std::uint64_t>(solver, "power_seed", cfg.solver.power_seed);
    cfg.solver.certificate_tol = get_or(solver, "certificate_tol", cfg.solver.certificate_tol);
    try {
      cfg.solver.validate();
    } catch (const std::exception& e) {
      throw ConfigError("solver", e.what());
    }
  }

  // --- sampler ---
  if (auto it = root.find("sampler"); it != root.end()) {
    const json& sampler = *it;
    cfg.sampler.eps = get_or(sampler, "eps", cfg.sampler.eps);
    cfg.sampler.seed = get_or<std::uint64_t>(sampler, "seed", cfg.sampler.seed);
    cfg.sampler.n_samples = get_or(sampler, "n_samples", cfg.sampler.n_samples);
    try {
      cfg.sampler.validate();
    } catch (const std::exception& e) {
      throw ConfigError("sampler", e.what());
    }
  }

  // --- command sections ---
  if (auto it = root.find("sample"); it != root.end()) {
    cfg.sample_t0 = get_or(*it, "t0", cfg.sample_t0);
    cfg.sample_model_path = get_or<std::string>(*it, "model", "");
  }
  if (auto it = root.find("validate"); it != root.end()) {
    const json& validate = *it;
    if (validate.contains("times")) {
      VectorXd times = get_vector(validate["times"], "validate.times");
      for (int k = 0; k < times.size(); ++k) cfg.validate_times.push_back(times[k]);
    }
    cfg.validate_samples = get_or(validate, "n_samples", cfg.validate_samples);
    cfg.baseline_paths = get_or(validate, "baseline_paths", cfg.baseline_paths);
    cfg.baseline_steps = get_or(validate, "baseline_steps", cfg.baseline_steps);
    cfg.baseline_seed = get_or<std::uint64_t>(validate, "baseline_seed", cfg.baseline_seed);
  }
  if (auto it = root.find("sweep"); it != root.end()) {
    const json& sweep = *it;
    if (sweep.contains("m_values")) {
      VectorXd ms = get_vector(sweep["m_values"], "sweep.m_values");
      for (int k = 0; k < ms.size(); ++k) {
        int m = static_cast<int>(ms[k]);
        if (m < 1) throw ConfigError("sweep.m_values", "entries must be positive");
        cfg.sweep_m_values.push_back(m);
      }
    }
    cfg.sweep_time = get_or(sweep, "time", cfg.sweep_time);
  }
  cfg.outputs = get_or<std::string>(root, "outputs", cfg.outputs);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("(file)", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace psdfp
