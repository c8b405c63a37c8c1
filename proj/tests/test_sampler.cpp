#include "psdfp/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "psdfp/quadrature.hpp"
#include "psdfp/rng.hpp"
#include "psdfp/sde_lab.hpp"
#include "test_support.hpp"

using namespace psdfp;

namespace {

/// Single-term model: exact N(0, 1/(4 eta)) truncated to a wide box.
GaussianPsdModel exact_gaussian_model(double eta, double box_halfwidth) {
  GaussianPsdModel model;
  model.base_points = MatrixXd::Zero(1, 1);
  model.coeff = MatrixXd::Constant(1, 1, 1.0);
  model.bandwidth = VectorXd::Constant(1, eta);
  model.domain = Box(VectorXd::Constant(1, -box_halfwidth), VectorXd::Constant(1, box_halfwidth));
  return normalize(model);
}

TEST(Sample, ExactGaussianMoments) {
  const double eta = 1.0;
  GaussianPsdModel model = exact_gaussian_model(eta, 10.0);
  SamplerConfig cfg;
  cfg.eps = 0.002;
  cfg.seed = 424242;
  cfg.n_samples = 100000;
  SampleBatch batch = sample(model, cfg);

  const double sigma2 = 1.0 / (4.0 * eta);
  double mean = batch.points.col(0).mean();
  double var = (batch.points.col(0).array() - mean).square().sum() / (cfg.n_samples - 1);
  EXPECT_LT(std::abs(mean), 4.0 * std::sqrt(sigma2 / cfg.n_samples));
  EXPECT_NEAR(var, sigma2, 0.05 * sigma2);
}

TEST(Sample, ExactGaussianKsStatistic) {
  const double eta = 1.0;
  GaussianPsdModel model = exact_gaussian_model(eta, 10.0);
  SamplerConfig cfg;
  cfg.eps = 0.002;
  cfg.seed = 7;
  cfg.n_samples = 10000;
  SampleBatch batch = sample(model, cfg);
  std::vector<double> xs(batch.points.data(), batch.points.data() + cfg.n_samples);
  double sigma = std::sqrt(1.0 / (4.0 * eta));
  double ks = ks_statistic(xs, [&](double x) { return normal_cdf(x / sigma); });
  double density_sup = evaluate(model, VectorXd::Zero(1));
  EXPECT_LE(ks, 1.63 / std::sqrt(cfg.n_samples) + cfg.eps * density_sup);
}

TEST(Sample, SymmetricModelHasNoSkew) {
  // Base points and coefficients invariant under x -> -x.
  GaussianPsdModel model;
  model.base_points.resize(3, 1);
  model.base_points << -1.0, 0.0, 1.0;
  Rng rng(428);
  MatrixXd b = psdfp::testing::random_psd_matrix(3, rng);
  MatrixXd p = MatrixXd::Zero(3, 3);  // flip permutation
  p(0, 2) = p(2, 0) = p(1, 1) = 1.0;
  model.coeff = 0.5 * (b + p * b * p);
  model.bandwidth = VectorXd::Constant(1, 1.0);
  model.domain = Box(VectorXd::Constant(1, -8.0), VectorXd::Constant(1, 8.0));
  model = normalize(model);

  SamplerConfig cfg;
  cfg.eps = 0.005;
  cfg.seed = 99;
  cfg.n_samples = 100000;
  SampleBatch batch = sample(model, cfg);
  double mean = batch.points.col(0).mean();
  double m2 = (batch.points.col(0).array() - mean).square().mean();
  double m3 = (batch.points.col(0).array() - mean).cube().mean();
  double skew = m3 / std::pow(m2, 1.5);
  EXPECT_LE(std::abs(skew), 0.05);
}

TEST(Sample, W1AgainstDenseCdf) {
  Rng rng(431);
  GaussianPsdModel model = psdfp::testing::random_space_model(4, 1, 1.0, 1.5, rng);
  model.domain = Box(VectorXd::Constant(1, -6.0), VectorXd::Constant(1, 6.0));
  model = normalize(model);
  SamplerConfig cfg;
  cfg.eps = 0.01;
  cfg.seed = 12345;
  cfg.n_samples = 100000;
  SampleBatch batch = sample(model, cfg);

  // Dense CDF of the model itself, then quantiles by monotone interpolation.
  const int grid_n = 4000;
  std::vector<double> xs(grid_n + 1), fs(grid_n + 1);
  for (int k = 0; k <= grid_n; ++k) {
    double x = model.domain.lower[0] + model.domain.width(0) * k / grid_n;
    xs[k] = x;
    fs[k] = cdf_1d(model, 0, VectorXd(), x);
  }
  auto quantile = [&](double u) {
    auto it = std::lower_bound(fs.begin(), fs.end(), u);
    if (it == fs.begin()) return xs.front();
    if (it == fs.end()) return xs.back();
    size_t hi = it - fs.begin(), lo = hi - 1;
    double span = fs[hi] - fs[lo];
    double w = span > 0 ? (u - fs[lo]) / span : 0.5;
    return xs[lo] + w * (xs[hi] - xs[lo]);
  };
  std::vector<double> pts(batch.points.data(), batch.points.data() + cfg.n_samples);
  double w1 = wasserstein1_vs_quantile(pts, quantile);

  // Expected empirical fluctuation E int |F_hat - F| dx.
  double fluct = 0.0;
  for (int k = 0; k < grid_n; ++k) {
    double f = 0.5 * (fs[k] + fs[k + 1]);
    fluct += std::sqrt(2.0 * f * (1.0 - f) / (M_PI * cfg.n_samples)) * (xs[k + 1] - xs[k]);
  }
  EXPECT_LE(w1, cfg.eps + 2.0 * fluct);
}

TEST(Sample, DeterministicByteForByte) {
  Rng rng(433);
  GaussianPsdModel model = psdfp::testing::random_space_model(3, 2, 0.8, 1.0, rng);
  model.domain = Box(VectorXd::Constant(2, -5.0), VectorXd::Constant(2, 5.0));
  model = normalize(model);
  SamplerConfig cfg;
  cfg.eps = 0.01;
  cfg.seed = 5150;
  cfg.n_samples = 500;
  SampleBatch a = sample(model, cfg);
  SampleBatch b = sample(model, cfg);
  ASSERT_EQ(a.points.size(), b.points.size());
  EXPECT_EQ(0, std::memcmp(a.points.data(), b.points.data(), sizeof(double) * a.points.size()));
  EXPECT_EQ(a.model_fingerprint, b.model_fingerprint);
}

TEST(Sample, AllPointsInsideBoxAndBisectionBudget) {
  Rng rng(439);
  GaussianPsdModel model = psdfp::testing::random_space_model(3, 2, 1.0, 1.0, rng);
  model.domain = Box(VectorXd::Constant(2, -4.0), VectorXd::Constant(2, 4.0));
  model = normalize(model);
  SamplerConfig cfg;
  cfg.eps = 0.02;
  cfg.seed = 17;
  cfg.n_samples = 2000;
  SampleBatch batch = sample(model, cfg);
  for (int n = 0; n < cfg.n_samples; ++n)
    EXPECT_TRUE(model.domain.contains(batch.points.row(n).transpose()));
  int budget = static_cast<int>(std::ceil(std::log2(model.domain.width(0) * 2 / cfg.eps)));
  EXPECT_LE(batch.max_bisections_per_coordinate, budget);
  EXPECT_GE(batch.max_bisections_per_coordinate, budget - 1);
}

TEST(Sample, EmptyBatchAndValidation) {
  GaussianPsdModel model = exact_gaussian_model(1.0, 8.0);
  SamplerConfig cfg;
  cfg.n_samples = 0;
  SampleBatch batch = sample(model, cfg);
  EXPECT_EQ(batch.points.rows(), 0);

  GaussianPsdModel unnormalized = exact_gaussian_model(1.0, 8.0);
  unnormalized.coeff *= 2.0;
  cfg.n_samples = 1;
  EXPECT_THROW(sample(unnormalized, cfg), std::invalid_argument);
}

TEST(Cdf1d, EndpointsAndSymmetry) {
  GaussianPsdModel model = exact_gaussian_model(1.0, 6.0);
  EXPECT_NEAR(cdf_1d(model, 0, VectorXd(), -6.0), 0.0, 1e-10);
  EXPECT_NEAR(cdf_1d(model, 0, VectorXd(), 6.0), 1.0, 1e-10);
  EXPECT_NEAR(cdf_1d(model, 0, VectorXd(), 0.0), 0.5, 1e-10);
}

TEST(Cdf1d, MatchesAdaptiveQuadrature) {
  Rng rng(443);
  GaussianPsdModel model = psdfp::testing::random_space_model(3, 2, 1.0, 1.2, rng);
  model.domain = Box(VectorXd::Constant(2, -5.0), VectorXd::Constant(2, 5.0));
  model = normalize(model);

  for (int rep = 0; rep < 5; ++rep) {
    // Last axis: prefix fixed, nothing left to integrate out.
    double x1 = rng.uniform(-2.0, 2.0), x = rng.uniform(-4.0, 4.0);
    VectorXd prefix = VectorXd::Constant(1, x1);
    auto slice = [&](double y) {
      VectorXd z(2);
      z << x1, y;
      return evaluate(model, z);
    };
    double num = integrate_adaptive(slice, -5.0, x, 1e-12);
    double den = integrate_adaptive(slice, -5.0, 5.0, 1e-12);
    EXPECT_NEAR(cdf_1d(model, 1, prefix, x), num / den, 1e-8);

    // First axis: trailing axis integrated over the box.
    auto marginal = [&](double y) {
      return integrate_adaptive(
          [&](double w) {
            VectorXd z(2);
            z << y, w;
            return evaluate(model, z);
          },
          -5.0, 5.0, 1e-12);
    };
    double num0 = integrate_adaptive(marginal, -5.0, x, 1e-9);
    double den0 = integrate_adaptive(marginal, -5.0, 5.0, 1e-9);
    EXPECT_NEAR(cdf_1d(model, 0, VectorXd(), x), num0 / den0, 1e-7);
  }
}

TEST(Cdf1d, MonotoneOnRandomTuples) {
  Rng rng(449);
  GaussianPsdModel model = psdfp::testing::random_space_model(4, 2, 0.9, 1.0, rng);
  model.domain = Box(VectorXd::Constant(2, -5.0), VectorXd::Constant(2, 5.0));
  model = normalize(model);
  for (int rep = 0; rep < 1000; ++rep) {
    int axis = rng.uniform_int(2);
    VectorXd prefix = VectorXd::Constant(axis, rng.uniform(-2.0, 2.0));
    double x1 = rng.uniform(-5.0, 5.0), x2 = rng.uniform(-5.0, 5.0);
    if (x1 > x2) std::swap(x1, x2);
    EXPECT_LE(cdf_1d(model, axis, prefix, x1), cdf_1d(model, axis, prefix, x2) + 1e-12);
  }
}

}  // namespace
