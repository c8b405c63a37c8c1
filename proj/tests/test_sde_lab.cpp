#include "psdfp/sde_lab.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "psdfp/rng.hpp"
#include "test_support.hpp"

using namespace psdfp;

namespace {

SdeProblem brownian_ou(double theta, double sigma, double mean0, double var0, double horizon) {
  SdeProblem problem;
  problem.dim = 1;
  problem.linear_theta = VectorXd::Constant(1, theta);
  problem.noise = NoiseKind::kBrownian;
  problem.diffusion = MatrixXd::Constant(1, 1, 0.5 * sigma * sigma);
  problem.p0 = GaussianMixture::single(VectorXd::Constant(1, mean0), VectorXd::Constant(1, var0));
  problem.space_box = Box(VectorXd::Constant(1, -8.0), VectorXd::Constant(1, 8.0));
  problem.horizon = horizon;
  return problem;
}

double sample_mean(const MatrixXd& pts) { return pts.col(0).mean(); }
double sample_var(const MatrixXd& pts) {
  double mu = pts.col(0).mean();
  return (pts.col(0).array() - mu).square().sum() / (pts.rows() - 1);
}

TEST(EulerMaruyama, PureDiffusionVariance) {
  SdeProblem problem = brownian_ou(1.0, 1.0, 0.0, 1e-12, 1.0);
  problem.linear_theta = VectorXd::Constant(1, 0.0);
  // theta = 0 is not a valid analytic_ou input but fine for simulation;
  // replace the drift with an RKHS expansion of zero? Simpler: tiny theta.
  problem.linear_theta = VectorXd::Constant(1, 1e-12);
  problem.diffusion = MatrixXd::Constant(1, 1, 0.5);  // 2 D t = 1 at t = 1
  auto out = euler_maruyama(problem, 100000, 1000, 31, {1.0});
  EXPECT_NEAR(sample_var(out[0]), 1.0, 0.03);
}

TEST(EulerMaruyama, ZeroNoiseFollowsOde) {
  SdeProblem problem = brownian_ou(2.0, 0.0, 1.5, 1e-18, 1.0);
  problem.diffusion = MatrixXd::Zero(1, 1);
  auto out = euler_maruyama(problem, 10, 1000, 5, {1.0});
  double expected = 1.5 * std::exp(-2.0);
  for (int p = 0; p < 10; ++p) EXPECT_NEAR(out[0](p, 0), expected, 5e-3);
}

TEST(EulerMaruyama, MatchesAnalyticOuMoments) {
  const double theta = 1.0, sigma = M_SQRT2;
  const int n = 100000;
  SdeProblem problem = brownian_ou(theta, sigma, 2.0, 0.04, 0.5);
  auto out = euler_maruyama(problem, n, 500, 77, {0.5});
  OuMarginal ou = analytic_ou(VectorXd::Constant(1, theta), sigma, VectorXd::Constant(1, 2.0),
                              VectorXd::Constant(1, 0.04), 0.5);
  double se_mean = std::sqrt(ou.variance[0] / n);
  double se_var = ou.variance[0] * std::sqrt(2.0 / (n - 1));
  EXPECT_NEAR(sample_mean(out[0]), ou.mean[0], 3.0 * se_mean + 2e-3);
  EXPECT_NEAR(sample_var(out[0]), ou.variance[0], 3.0 * se_var + 4e-3);
}

TEST(EulerMaruyama, StepHalvingSaturates) {
  SdeProblem problem = brownian_ou(1.0, 1.0, 1.0, 0.09, 1.0);
  const int n = 100000;
  auto coarse = euler_maruyama(problem, n, 400, 11, {1.0});
  auto fine = euler_maruyama(problem, n, 800, 11, {1.0});
  OuMarginal ou = analytic_ou(VectorXd::Constant(1, 1.0), 1.0, VectorXd::Constant(1, 1.0),
                              VectorXd::Constant(1, 0.09), 1.0);
  double width = 3.0 * std::sqrt(ou.variance[0] / n);
  EXPECT_LE(std::abs(sample_mean(coarse[0]) - sample_mean(fine[0])), 2.0 * width);
  EXPECT_LE(std::abs(sample_var(coarse[0]) - sample_var(fine[0])),
            2.0 * 3.0 * ou.variance[0] * std::sqrt(2.0 / n));
}

TEST(EulerMaruyama, RejectsStableNoise) {
  SdeProblem problem = brownian_ou(1.0, 1.0, 0.0, 0.01, 1.0);
  problem.noise = NoiseKind::kStable;
  problem.alpha = 1.5;
  EXPECT_THROW(euler_maruyama(problem, 10, 100, 1, {0.5}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(StableDraws, AlphaTwoIsGaussianVarianceTwo) {
  VectorXd draws = stable_step_sampler(2.0, 10000, 313);
  double mu = draws.mean();
  double var = (draws.array() - mu).square().sum() / (draws.size() - 1);
  EXPECT_NEAR(var, 2.0, 0.1);
  // Jarque-Bera: n (skew^2 / 6 + (kurt - 3)^2 / 24) below the 1% chi2_2 bar.
  double m2 = (draws.array() - mu).square().mean();
  double m3 = (draws.array() - mu).cube().mean();
  double m4 = (draws.array() - mu).pow(4).mean();
  double skew = m3 / std::pow(m2, 1.5), kurt = m4 / (m2 * m2);
  double jb = draws.size() * (skew * skew / 6.0 + (kurt - 3.0) * (kurt - 3.0) / 24.0);
  EXPECT_LT(jb, 9.21);
}

TEST(StableDraws, CauchyMedianAbsoluteValue) {
  VectorXd draws = stable_step_sampler(1.0, 100000, 317);
  std::vector<double> mags(draws.size());
  for (int i = 0; i < draws.size(); ++i) mags[i] = std::abs(draws[i]);
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  EXPECT_NEAR(mags[mags.size() / 2], std::tan(M_PI / 4.0), 0.02);
}

TEST(StableDraws, EmpiricalCharacteristicFunction) {
  for (double alpha : {0.8, 1.0, 1.5, 2.0}) {
    VectorXd draws = stable_step_sampler(alpha, 100000, 331 + static_cast<int>(10 * alpha));
    for (double u : {0.5, 1.0, 2.0}) {
      double mean_cos = (draws.array() * u).cos().mean();
      double sd = std::sqrt(((draws.array() * u).cos() - mean_cos).square().mean());
      double expected = std::exp(-std::pow(std::abs(u), alpha));
      EXPECT_NEAR(mean_cos, expected, 3.0 * sd / std::sqrt(static_cast<double>(draws.size())))
          << "alpha=" << alpha << " u=" << u;
    }
  }
}

TEST(StableDraws, PositiveStableLaplaceTransform) {
  Rng rng(337);
  const int n = 100000;
  for (double rho : {0.5, 0.75}) {
    double mean = 0.0, mean2 = 0.0, mean05 = 0.0;
    for (int k = 0; k < n; ++k) {
      double s = stable_positive_draw(rng, rho);
      mean += std::exp(-s) / n;
      mean2 += std::exp(-2.0 * s) / n;
      mean05 += std::exp(-0.5 * s) / n;
    }
    EXPECT_NEAR(mean, std::exp(-1.0), 5e-3);
    EXPECT_NEAR(mean2, std::exp(-std::pow(2.0, rho)), 5e-3);
    EXPECT_NEAR(mean05, std::exp(-std::pow(0.5, rho)), 5e-3);
  }
}

TEST(StableDraws, IsotropicVectorCharacteristicFunction) {
  Rng rng(347);
  const int n = 200000;
  const double alpha = 1.5;
  VectorXd u(2);
  u << 0.6, -0.8;  // unit norm
  double mean_cos = 0.0;
  for (int k = 0; k < n; ++k) {
    VectorXd x = stable_isotropic_draw(rng, alpha, 2);
    mean_cos += std::cos(u.dot(x)) / n;
  }
  EXPECT_NEAR(mean_cos, std::exp(-1.0), 5e-3);
}

TEST(StableDraws, HeavyTailMomentStabilizes) {
  const double alpha = 1.5, p = alpha / 2.0;
  VectorXd big = stable_step_sampler(alpha, 100000, 353);
  double m_small = 0.0, m_big = 0.0;
  for (int i = 0; i < 10000; ++i) m_small += std::pow(std::abs(big[i]), p) / 10000.0;
  for (int i = 0; i < big.size(); ++i) m_big += std::pow(std::abs(big[i]), p) / big.size();
  EXPECT_NEAR(m_small, m_big, 0.10 * m_big);
}

TEST(StableDraws, RejectsBadAlpha) {
  EXPECT_THROW(stable_step_sampler(0.0, 10, 1), std::invalid_argument);
  EXPECT_THROW(stable_step_sampler(2.5, 10, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(AnalyticOu, EndpointsAndStationarity) {
  VectorXd theta = VectorXd::Constant(1, 2.0);
  VectorXd m0 = VectorXd::Constant(1, 1.5), v0 = VectorXd::Constant(1, 0.3);
  OuMarginal at0 = analytic_ou(theta, 1.2, m0, v0, 0.0);
  EXPECT_NEAR(at0.mean[0], 1.5, 1e-14);
  EXPECT_NEAR(at0.variance[0], 0.3, 1e-14);
  OuMarginal late = analytic_ou(theta, 1.2, m0, v0, 60.0);
  EXPECT_NEAR(late.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(late.variance[0], 1.2 * 1.2 / 4.0, 1e-12);
  EXPECT_THROW(analytic_ou(VectorXd::Constant(1, -1.0), 1.0, m0, v0, 1.0), std::invalid_argument);
}

TEST(Wasserstein, IdenticalAndShifted) {
  std::vector<double> a = {0.3, -1.0, 2.0, 0.7};
  EXPECT_DOUBLE_EQ(wasserstein1_1d(a, a), 0.0);
  std::vector<double> shifted;
  for (double x : a) shifted.push_back(x + 0.25);
  EXPECT_NEAR(wasserstein1_1d(a, shifted), 0.25, 1e-15);
}

TEST(Wasserstein, GaussianSamplesVsAnalytic) {
  Rng rng(359);
  std::vector<double> xs(100000);
  for (auto& x : xs) x = rng.normal();
  double w1 = wasserstein1_vs_quantile(xs, [](double u) { return normal_quantile(u); });
  EXPECT_LE(w1, 0.01);
}

TEST(Wasserstein, MetricAxiomsOnRandomTriples) {
  Rng rng(367);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 50 + rng.uniform_int(50);
    std::vector<double> a(n), b(n), c(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.normal();
      b[i] = 0.5 * rng.normal() + 0.3;
      c[i] = 2.0 * rng.normal() - 1.0;
    }
    double ab = wasserstein1_1d(a, b), ba = wasserstein1_1d(b, a);
    EXPECT_DOUBLE_EQ(ab, ba);
    double ac = wasserstein1_1d(a, c), bc = wasserstein1_1d(b, c);
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(Wasserstein, UnequalSizesAgreeWithEqualSizeLimit) {
  Rng rng(373);
  std::vector<double> a(4000), b(1000);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = 0.8 * rng.normal() + 0.1;
  std::vector<double> b4;  // each point repeated 4x has the same CDF
  for (double x : b)
    for (int r = 0; r < 4; ++r) b4.push_back(x);
  EXPECT_NEAR(wasserstein1_1d(a, b), wasserstein1_1d(a, b4), 1e-12);
}

TEST(SlicedWasserstein, ReducesToExactInOneDim) {
  Rng rng(379);
  MatrixXd a(200, 1), b(200, 1);
  for (int i = 0; i < 200; ++i) {
    a(i, 0) = rng.normal();
    b(i, 0) = rng.normal() + 1.0;
  }
  std::vector<double> va(a.data(), a.data() + 200), vb(b.data(), b.data() + 200);
  EXPECT_DOUBLE_EQ(sliced_wasserstein1(a, b), wasserstein1_1d(va, vb));
}

TEST(L2DensityError, ExactRepresentationIsZero) {
  // Model = exact normalized Gaussian: single pair with matching weight.
  GaussianPsdModel model;
  model.base_points = MatrixXd::Zero(1, 1);
  model.bandwidth = VectorXd::Constant(1, 1.0);
  model.domain = Box(VectorXd::Constant(1, -6.0), VectorXd::Constant(1, 6.0));
  double sigma2 = 0.25;  // variance of exp(-2 x^2) as a density
  model.coeff = MatrixXd::Constant(1, 1, 1.0 / std::sqrt(2.0 * M_PI * sigma2));
  auto reference = [&](const VectorXd& x) {
    return std::exp(-x[0] * x[0] / (2.0 * sigma2)) / std::sqrt(2.0 * M_PI * sigma2);
  };
  EXPECT_LE(l2_density_error(model, reference, model.domain), 1e-8);
}

TEST(L2DensityError, ZeroModelAgainstStandardNormal) {
  GaussianPsdModel model;
  model.base_points = MatrixXd::Zero(1, 1);
  model.bandwidth = VectorXd::Constant(1, 1.0);
  model.coeff = MatrixXd::Zero(1, 1);
  model.domain = Box(VectorXd::Constant(1, -6.0), VectorXd::Constant(1, 6.0));
  auto reference = [](const VectorXd& x) {
    return std::exp(-0.5 * x[0] * x[0]) / std::sqrt(2.0 * M_PI);
  };
  double expected = std::pow(M_PI, -0.25) / M_SQRT2;  // L2 norm of N(0,1)
  EXPECT_NEAR(l2_density_error(model, reference, model.domain), expected, 1e-6);
}

}  // namespace
