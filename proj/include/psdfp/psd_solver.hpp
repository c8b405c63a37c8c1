#pragma once

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "psdfp/common.hpp"
#include "psdfp/fpe_assembly.hpp"

namespace psdfp {

enum class SolverMethod { kProjectedAcceleratedGradient, kFactoredDescent };

struct SolverConfig {
  SolverMethod method = SolverMethod::kProjectedAcceleratedGradient;
  int max_iters = 20000;
  double rel_tol = 1e-9;          // objective-change stopping rule
  int rank_cap = 32;              // factored method, clamped to m
  int power_iters = 20;           // Lipschitz estimate
  std::uint64_t power_seed = 7;
  double certificate_tol = 1e-5;  // projected-gradient optimality target
  int polish_rounds = 120;        // certification phase budget

  void validate() const {
    if (!(rel_tol > 0.0) || !(certificate_tol > 0.0))
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (rank_cap < 1) throw std::invalid_argument("SolverConfig: rank_cap >= 1 required");
    if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters >= 1 required");
  }
};

struct FitReport {
  double objective = 0.0;
  double residual_part = 0.0;  // residual norm squared (plus coefficient ridge)
  double ic_penalty = 0.0;     // lambda_ic * ic term
  double mass_penalty = 0.0;   // lambda_mass * mass term
  double mass_at_zero = 0.0;
  int iterations = 0;
  int projections = 0;
  double wall_seconds = 0.0;
  double coeff_min_eigenvalue = 0.0;
  double coeff_max_eigenvalue = 0.0;
  double pg_certificate = 0.0;  // L * ||A - proj(A - grad/L)||_F
  double lipschitz = 0.0;
  bool converged = false;

  /// Timing is excluded by default so artifacts embedding the report stay
  /// byte-identical across reruns.
  std::string to_json(bool include_timing = false) const {
    std::string s = "{";
    auto field = [&s](const char* k, const std::string& v, bool first = false) {
      if (!first) s += ", ";
      s += '"';
      s += k;
      s += "\": ";
      s += v;
    };
    field("objective", format_real(objective), true);
    field("residual_part", format_real(residual_part));
    field("ic_penalty", format_real(ic_penalty));
    field("mass_penalty", format_real(mass_penalty));
    field("mass_at_zero", format_real(mass_at_zero));
    field("iterations", std::to_string(iterations));
    field("projections", std::to_string(projections));
    if (include_timing) field("wall_seconds", format_real(wall_seconds));
    field("coeff_min_eigenvalue", format_real(coeff_min_eigenvalue));
    field("coeff_max_eigenvalue", format_real(coeff_max_eigenvalue));
    field("pg_certificate", format_real(pg_certificate));
    field("lipschitz", format_real(lipschitz));
    field("converged", converged ? "true" : "false");
    s += "}";
    return s;
  }
};

/// Euclidean projection onto the PSD cone: clip negative eigenvalues.
inline MatrixXd project_psd(const MatrixXd& s) {
  MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("project_psd: eigensolver failed");
  VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

namespace detail {

inline MatrixXd default_initial(const ResidualProblem& prob) {
  const int m = prob.m();
  double diag_mass = 0.0;
  for (int i = 0; i < m; ++i) diag_mass += prob.mass_vec[i * m - i * (i - 1) / 2];
  double scale = diag_mass > 1e-12 ? 1.0 / diag_mass : 1e-3;
  return scale * MatrixXd::Identity(m, m);
}

inline void check_finite(double j) {
  if (!std::isfinite(j))
    throw std::runtime_error("solve: non-finite objective (malformed problem)");
}

/// CG in the face A = U S U^T (S symmetric, unconstrained). Keeps the
/// best-objective iterate: the reduced system can be numerically singular and
/// late CG iterations may drift.
inline MatrixXd face_cg_candidate(const ResidualProblem& prob, const MatrixXd& u,
                                  const MatrixXd& a_start, int max_iters) {
  auto restrict_sym = [&](const MatrixXd& g) {
    MatrixXd t = u.transpose() * g * u;
    return MatrixXd(0.5 * (t + t.transpose()));
  };
  auto lift = [&](const MatrixXd& s) { return MatrixXd(u * s * u.transpose()); };
  auto hess = [&](const MatrixXd& s) {
    return restrict_sym(prob.index.unpack(2.0 * (prob.gram * prob.index.pack(lift(s)))));
  };
  MatrixXd s = restrict_sym(a_start);
  MatrixXd res = -restrict_sym(prob.gradient(lift(s)));
  MatrixXd p = res;
  double rs = res.squaredNorm();
  MatrixXd step = MatrixXd::Zero(u.cols(), u.cols());
  MatrixXd best_step = step;
  double phi = 0.0, best_phi = 0.0;
  int stall = 0;
  for (int it = 0; it < max_iters && rs > 0.0 && stall < 40; ++it) {
    MatrixXd hp = hess(p);
    double php = p.cwiseProduct(hp).sum();
    if (!(php > 1e-300)) break;
    double alpha = rs / php;
    step += alpha * p;
    phi -= 0.5 * alpha * rs;  // exact objective decrease along CG
    res -= alpha * hp;
    double rsn = res.squaredNorm();
    p = res + (rsn / rs) * p;
    rs = rsn;
    if (phi < best_phi) {
      best_phi = phi;
      best_step = step;
      stall = 0;
    } else {
      ++stall;
    }
  }
  return lift(s + best_step);
}

inline MatrixXd positive_eigenspace(const MatrixXd& a, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  double top = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  int rank = 0;
  for (int i = 0; i < a.rows(); ++i)
    if (es.eigenvalues()[i] > rel_tol * top) ++rank;
  return es.eigenvectors().rightCols(std::max(rank, 1));
}

/// Certification phase: alternate a face-restricted CG solve with exact
/// rank-1 descent steps along negative eigendirections of the gradient (such
/// steps stay in the cone without projection). Every move is accepted only if
/// the objective decreases, so the phase is monotone; it terminates when the
/// projected-gradient certificate clears or the round budget runs out.
inline bool certify(const ResidualProblem& prob, const SolverConfig& cfg, double big_l,
                    MatrixXd& a, double& j, FitReport& report) {
  const double norm_guard = 1e6 * (1.0 + a.norm());
  for (int round = 0; round < cfg.polish_rounds; ++round) {
    ++report.iterations;

    MatrixXd face = positive_eigenspace(a, 1e-11);
    MatrixXd cand = project_psd(face_cg_candidate(prob, face, a, 400));
    ++report.projections;
    double jc = prob.objective(cand);
    check_finite(jc);
    if (jc < j) {
      a = cand;
      j = jc;
    }

    MatrixXd grad = prob.gradient(a);
    Eigen::SelfAdjointEigenSolver<MatrixXd> esg(grad);
    for (int i = 0; i < a.rows() && esg.eigenvalues()[i] < 0.0 && i < 8; ++i) {
      VectorXd v = esg.eigenvectors().col(i);
      MatrixXd w = v * v.transpose();
      VectorXd cw = prob.index.pack(w);
      double curvature = cw.dot(prob.gram * cw);
      double slope = grad.cwiseProduct(w).sum();
      if (slope >= 0.0 || !(curvature > 1e-14 * big_l)) continue;
      double tau = std::min(-slope / (2.0 * curvature), 1e3 * (1.0 + a.norm()));
      MatrixXd next = a + tau * w;
      if (next.norm() > norm_guard) continue;
      double jn = prob.objective(next);
      check_finite(jn);
      if (jn < j) {
        a = next;
        j = jn;
        grad = prob.gradient(a);
      }
    }

    MatrixXd pg = a - project_psd(a - prob.gradient(a) / big_l);
    ++report.projections;
    report.pg_certificate = big_l * pg.norm();
    if (report.pg_certificate <= cfg.certificate_tol * 0.5 * (1.0 + std::abs(j))) return true;
  }
  return false;
}

}  // namespace detail

/// Minimize the quadratic over the PSD cone. Projected accelerated gradient
/// with function-value restart (step 1/L, L from power iteration on the gram,
/// backtracking halving), then a certification phase that closes the
/// projected-gradient optimality gap.
inline std::pair<MatrixXd, FitReport> solve(const ResidualProblem& prob, const SolverConfig& cfg,
                                            const MatrixXd* init = nullptr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int m = prob.m();

  double lam_q = prob.lipschitz_estimate(cfg.power_iters, cfg.power_seed);
  if (!(lam_q > 0.0)) throw std::runtime_error("solve: Lipschitz estimate is zero");
  double big_l = 2.0 * lam_q * (1.0 + 1e-3);

  FitReport report;
  report.lipschitz = big_l;

  MatrixXd a = init ? *init : detail::default_initial(prob);
  if (init) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(*init, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -kPsdTolerance * std::max(1.0, es.eigenvalues().maxCoeff()))
      throw std::invalid_argument("solve: initial matrix must be PSD");
  }

  double j_cur = prob.objective(a);
  detail::check_finite(j_cur);

  if (cfg.method == SolverMethod::kProjectedAcceleratedGradient) {
    MatrixXd y = a;
    double theta = 1.0;
    int stagnant = 0;
    for (int it = 0; it < cfg.max_iters; ++it) {
      MatrixXd grad = prob.gradient(y);
      double j_y = prob.objective(y);
      MatrixXd a_next;
      double j_next = 0.0;
      // Backtracking on the quadratic upper bound at y.
      for (int bt = 0;; ++bt) {
        a_next = project_psd(y - grad / big_l);
        ++report.projections;
        MatrixXd delta = a_next - y;
        j_next = prob.objective(a_next);
        detail::check_finite(j_next);
        double bound = j_y + grad.cwiseProduct(delta).sum() + 0.5 * big_l * delta.squaredNorm();
        if (j_next <= bound + 1e-12 * (1.0 + std::abs(bound)) || bt >= 60) break;
        big_l *= 2.0;
      }
      ++report.iterations;

      if (j_next > j_cur) {
        // Momentum overshoot: restart from the last accepted iterate.
        y = a;
        theta = 1.0;
        MatrixXd g = prob.gradient(a);
        a_next = project_psd(a - g / big_l);
        ++report.projections;
        j_next = prob.objective(a_next);
        if (j_next > j_cur) {  // no further progress at this step size
          a_next = a;
          j_next = j_cur;
        }
      }

      double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      y = a_next + ((theta - 1.0) / theta_next) * (a_next - a);
      theta = theta_next;

      double delta_j = std::abs(j_cur - j_next);
      a = a_next;
      j_cur = j_next;

      stagnant = delta_j <= cfg.rel_tol * (1.0 + std::abs(j_cur)) ? stagnant + 1 : 0;
      if (stagnant >= 3) break;
    }
    report.converged = detail::certify(prob, cfg, big_l, a, j_cur, report);
  } else {
    // Burer-Monteiro style descent on A = B B^T with spectral (BB) steps and
    // an Armijo backtracking safeguard; the low-rank alternative path.
    const int r = std::min(cfg.rank_cap, m);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    MatrixXd b = es.eigenvectors().rightCols(r) * lam.tail(r).cwiseSqrt().asDiagonal();
    auto objective_b = [&](const MatrixXd& bb) { return prob.objective(bb * bb.transpose()); };
    auto gradient_b = [&](const MatrixXd& bb) {
      return MatrixXd(2.0 * prob.gradient(bb * bb.transpose()) * bb);
    };
    double step = 1.0 / (4.0 * big_l * std::max(1.0, b.squaredNorm()));
    MatrixXd grad = gradient_b(b);
    j_cur = objective_b(b);
    MatrixXd b_prev = b, grad_prev = grad;
    for (int it = 0; it < cfg.max_iters; ++it) {
      ++report.iterations;
      if (it > 0) {
        MatrixXd db = b - b_prev, dg = grad - grad_prev;
        double denom = db.cwiseProduct(dg).sum();
        if (denom > 1e-300) step = db.squaredNorm() / denom;
        step = std::min(std::max(step, 1e-16), 1e8);
      }
      double j_next = 0.0;
      MatrixXd b_next;
      for (int bt = 0;; ++bt) {
        b_next = b - step * grad;
        j_next = objective_b(b_next);
        detail::check_finite(j_next);
        if (j_next <= j_cur - 1e-4 * step * grad.squaredNorm() || bt >= 80) break;
        step *= 0.5;
      }
      if (j_next > j_cur) break;  // no descent direction left
      b_prev = b;
      grad_prev = grad;
      b = b_next;
      grad = gradient_b(b);
      double delta_j = j_cur - j_next;
      j_cur = j_next;
      if (delta_j <= cfg.rel_tol * (1.0 + std::abs(j_cur)) &&
          grad.norm() <= cfg.certificate_tol * (1.0 + std::abs(j_cur))) {
        report.converged = true;
        break;
      }
    }
    a = b * b.transpose();
    j_cur = prob.objective(a);
  }

  // Final certificate and report.
  {
    MatrixXd g = prob.gradient(a);
    MatrixXd pg = a - project_psd(a - g / big_l);
    ++report.projections;
    report.pg_certificate = big_l * pg.norm();
  }
  report.objective = j_cur;
  double ic = prob.ic_part(a), mass = prob.mass_part(a);
  report.ic_penalty = prob.ic_weight * ic;
  report.mass_penalty = prob.mass_weight * mass;
  report.residual_part = j_cur - report.ic_penalty - report.mass_penalty;
  report.mass_at_zero = prob.mass_at_zero(a);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es_final(a, Eigen::EigenvaluesOnly);
  report.coeff_min_eigenvalue = es_final.eigenvalues().minCoeff();
  report.coeff_max_eigenvalue = es_final.eigenvalues().maxCoeff();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  PSDFP_LOG_INFO(
      "solve: m=%d iters=%d J=%.6e residual=%.3e ic=%.3e mass0=%.4f cert=%.2e converged=%d", m,
      report.iterations, report.objective, report.residual_part, report.ic_penalty,
      report.mass_at_zero, report.pg_certificate, report.converged ? 1 : 0);
  return {std::move(a), report};
}

}  // namespace psdfp
