#include "psdfp/gaussian_algebra.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "psdfp/quadrature.hpp"
#include "psdfp/rng.hpp"
#include "test_support.hpp"

using namespace psdfp;

namespace {

VectorXd vec1(double x) { return VectorXd::Constant(1, x); }

TEST(GaussianProduct, IdenticalCenters) {
  GaussianTerm a(vec1(0.0), vec1(1.0), 1.0);
  GaussianTerm g = product(a, a);
  EXPECT_DOUBLE_EQ(g.precision[0], 2.0);
  EXPECT_DOUBLE_EQ(g.center[0], 0.0);
  EXPECT_DOUBLE_EQ(g.weight, 1.0);
}

TEST(GaussianProduct, SeparatedCentersMatchPointwise) {
  GaussianTerm a(vec1(0.0), vec1(1.0), 1.0);
  GaussianTerm b(vec1(2.0), vec1(1.0), 1.0);
  GaussianTerm g = product(a, b);
  EXPECT_NEAR(g.precision[0], 2.0, 1e-15);
  EXPECT_NEAR(g.center[0], 1.0, 1e-15);
  EXPECT_NEAR(g.weight, std::exp(-2.0), 1e-15);
  for (double z : {0.0, 1.0, 2.0})
    EXPECT_NEAR(g.eval(vec1(z)), a.eval(vec1(z)) * b.eval(vec1(z)), 1e-12);
}

TEST(GaussianProduct, ZeroWeightAnnihilates) {
  GaussianTerm a(vec1(0.3), vec1(1.0), 0.0);
  GaussianTerm b(vec1(-1.0), vec1(2.0), 5.0);
  EXPECT_DOUBLE_EQ(product(a, b).weight, 0.0);
}

TEST(GaussianProduct, CommutativeAndAssociative) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    int dim = 1 + rng.uniform_int(3);
    auto make = [&] {
      VectorXd c(dim), p(dim);
      for (int a = 0; a < dim; ++a) {
        c[a] = rng.uniform(-2.0, 2.0);
        p[a] = rng.uniform(0.2, 3.0);
      }
      return GaussianTerm(c, p, rng.uniform(0.1, 2.0));
    };
    GaussianTerm a = make(), b = make(), c = make();
    GaussianTerm ab = product(a, b), ba = product(b, a);
    EXPECT_NEAR(ab.weight, ba.weight, 1e-12 * std::abs(ab.weight));
    EXPECT_LT((ab.center - ba.center).cwiseAbs().maxCoeff(), 1e-13);
    GaussianTerm left = product(product(a, b), c), right = product(a, product(b, c));
    EXPECT_NEAR(left.weight, right.weight, 1e-12 * std::abs(left.weight));
    EXPECT_LT((left.center - right.center).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((left.precision - right.precision).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GaussianProduct, DimensionMismatchThrows) {
  GaussianTerm a(vec1(0.0), vec1(1.0), 1.0);
  GaussianTerm b(VectorXd::Zero(2), VectorXd::Ones(2), 1.0);
  EXPECT_THROW(product(a, b), std::invalid_argument);
}

TEST(MomentIntegral, StandardGaussian) {
  PolyGaussian term(GaussianTerm(vec1(0.0), vec1(1.0), 1.0));
  EXPECT_NEAR(moment_integral(term, std::nullopt), std::sqrt(M_PI), 1e-14);
}

TEST(MomentIntegral, SecondMoment) {
  Poly p;
  p.add(multi_index_bump(0u, 0, 2), 1.0);  // z^2
  PolyGaussian term(GaussianTerm(vec1(0.0), vec1(1.0), 1.0), p);
  EXPECT_NEAR(moment_integral(term, std::nullopt), 0.5 * std::sqrt(M_PI), 1e-14);
}

TEST(MomentIntegral, BoxLinearMomentMatchesQuadrature) {
  Poly p;
  p.add(multi_index_bump(0u, 0), 1.0);  // z
  PolyGaussian term(GaussianTerm(vec1(0.3), vec1(2.0), 1.0), p);
  Box box(vec1(0.0), vec1(1.0));
  double expected = integrate_adaptive(
      [](double z) { return z * std::exp(-2.0 * (z - 0.3) * (z - 0.3)); }, 0.0, 1.0, 1e-13);
  EXPECT_NEAR(moment_integral(term, box), expected, 1e-10);
}

TEST(MomentIntegral, BoxConvergesToFullSpace) {
  Rng rng(23);
  for (int rep = 0; rep < 30; ++rep) {
    int dim = 1 + rng.uniform_int(2);
    PolyGaussian term = psdfp::testing::random_poly_gaussian(dim, rng);
    double half = 10.0 / std::sqrt(term.gaussian.precision.minCoeff());
    Box box(term.gaussian.center.array() - half, term.gaussian.center.array() + half);
    double full = moment_integral(term, std::nullopt);
    double boxed = moment_integral(term, box);
    EXPECT_NEAR(boxed, full, 1e-10 * std::max(1.0, std::abs(full)));
  }
}

TEST(MomentIntegral, DegreeAboveFourThrows) {
  Poly p;
  EXPECT_THROW(p.add(multi_index_bump(0u, 0, 5), 1.0), std::invalid_argument);
}

TEST(L2InnerProduct, UnitGaussians) {
  PolyGaussian a(GaussianTerm(vec1(0.0), vec1(1.0), 1.0));
  EXPECT_NEAR(l2_inner_product(a, a, std::nullopt), std::sqrt(M_PI / 2.0), 1e-14);
}

TEST(L2InnerProduct, OddSymmetryVanishes) {
  Poly odd;
  odd.add(multi_index_bump(0u, 0), 1.0);
  PolyGaussian a(GaussianTerm(vec1(0.0), vec1(1.0), 1.0), odd);
  PolyGaussian b(GaussianTerm(vec1(0.0), vec1(1.0), 1.0));
  EXPECT_NEAR(l2_inner_product(a, b, std::nullopt), 0.0, 1e-15);
}

TEST(L2InnerProduct, MatchesTensorQuadrature2D) {
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    PolyGaussian a = psdfp::testing::random_poly_gaussian(2, rng);
    PolyGaussian b = psdfp::testing::random_poly_gaussian(2, rng);
    double closed = l2_inner_product(a, b, std::nullopt);
    VectorXd kappa = (a.gaussian.precision + b.gaussian.precision) / 4.0;
    VectorXd center = 0.5 * (a.gaussian.center + b.gaussian.center);
    double quad = psdfp::testing::integrate_full_space(
        [&](const VectorXd& z) { return a.eval(z) * b.eval(z); }, center, kappa);
    EXPECT_NEAR(closed, quad, 1e-8 * std::max(1.0, std::abs(closed)));
  }
}

TEST(L2InnerProduct, SelfInnerProductNonnegative) {
  Rng rng(41);
  for (int rep = 0; rep < 100; ++rep) {
    PolyGaussian a = psdfp::testing::random_poly_gaussian(1 + rng.uniform_int(2), rng);
    EXPECT_GE(l2_inner_product(a, a, std::nullopt), 0.0);
  }
}

TEST(L2InnerProduct, CombinedDegreeOverflowThrows) {
  Poly cubic;
  cubic.add(multi_index_bump(0u, 0, 3), 1.0);
  PolyGaussian a(GaussianTerm(vec1(0.0), vec1(1.0), 1.0), cubic);
  EXPECT_THROW(l2_inner_product(a, a, std::nullopt), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class FpeOperatorTest : public ::testing::Test {
 protected:
  static RkhsDrift small_drift(int d, Rng& rng, int centers = 3) {
    RkhsDrift drift;
    drift.centers.resize(centers, d + 1);
    drift.weights.resize(d, centers);
    for (int l = 0; l < centers; ++l)
      for (int a = 0; a <= d; ++a) drift.centers(l, a) = rng.uniform(-1.0, 1.0);
    for (int a = 0; a < d; ++a)
      for (int l = 0; l < centers; ++l) drift.weights(a, l) = rng.uniform(-1.0, 1.0);
    drift.gamma = VectorXd::Constant(d + 1, 0.7);
    return drift;
  }
};

TEST_F(FpeOperatorTest, TimeDerivativeOnly) {
  VectorXd zi(2), zj(2), eta(2);
  zi << 0.2, 0.1;
  zj << -0.4, 0.5;
  eta << 1.0, 1.3;
  auto terms = apply_fpe_operator(zi, zj, eta, nullptr, MatrixXd());
  ASSERT_EQ(terms.size(), 1u);  // only the d/dt term
  auto phi = psdfp::testing::pair_feature(zi, zj, eta);
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    VectorXd z(2);
    z << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    double fd = psdfp::testing::fpe_operator_fd(phi, nullptr, MatrixXd(), z);
    EXPECT_NEAR(eval_terms(terms, z), fd, 1e-6);
  }
}

TEST_F(FpeOperatorTest, PureDiffusionMatchesFiniteDifference) {
  VectorXd zi(2), zj(2), eta(2);
  zi << 0.3, 0.0;
  zj << -0.2, 0.4;
  eta << 0.8, 1.1;
  MatrixXd diff = MatrixXd::Identity(1, 1);
  auto terms = apply_fpe_operator(zi, zj, eta, nullptr, diff);
  auto phi = psdfp::testing::pair_feature(zi, zj, eta);
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    VectorXd z(2);
    z << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    double fd = psdfp::testing::fpe_operator_fd(phi, nullptr, diff, z);
    EXPECT_NEAR(eval_terms(terms, z), fd, 1e-6);
  }
}

TEST_F(FpeOperatorTest, FullOperatorMatchesFiniteDifferenceEverywhere) {
  Rng rng(7);
  for (int instance = 0; instance < 3; ++instance) {
    int d = 1 + rng.uniform_int(2);
    VectorXd zi(d + 1), zj(d + 1), eta(d + 1);
    for (int a = 0; a <= d; ++a) {
      zi[a] = rng.uniform(-1.0, 1.0);
      zj[a] = rng.uniform(-1.0, 1.0);
      eta[a] = rng.uniform(0.5, 1.5);
    }
    RkhsDrift drift = small_drift(d, rng);
    MatrixXd diff = psdfp::testing::random_psd_matrix(d, rng, 0.5);
    auto terms = apply_fpe_operator(zi, zj, eta, &drift, diff);
    auto phi = psdfp::testing::pair_feature(zi, zj, eta);
    for (int rep = 0; rep < 100; ++rep) {
      VectorXd z(d + 1);
      for (int a = 0; a <= d; ++a) z[a] = rng.uniform(-1.2, 1.2);
      double fd = psdfp::testing::fpe_operator_fd(phi, &drift, diff, z);
      EXPECT_NEAR(eval_terms(terms, z), fd, 1e-5);
    }
  }
}

TEST_F(FpeOperatorTest, DiagonalPairStructure) {
  VectorXd zi(2), eta(2);
  zi << 0.4, 0.2;
  eta << 1.0, 2.0;
  MatrixXd diff = MatrixXd::Identity(1, 1);
  auto terms = apply_fpe_operator(zi, zi, eta, nullptr, diff);
  // All local terms sit on the squared-kernel Gaussian: center at the base
  // point, per-axis precision 2 eta.
  for (const auto& t : terms) {
    EXPECT_LT((t.gaussian.center - zi).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((t.gaussian.precision - 2.0 * eta).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST_F(FpeOperatorTest, RejectsBadInputs) {
  VectorXd zi(2), eta(2);
  zi << 0.0, 0.0;
  eta << 1.0, 1.0;
  MatrixXd bad(1, 1);
  bad << 1.0;
  MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  VectorXd zi3(3), eta3(3);
  zi3 << 0, 0, 0;
  eta3 << 1, 1, 1;
  EXPECT_THROW(apply_fpe_operator(zi3, zi3, eta3, nullptr, asym), std::invalid_argument);
  Rng rng(3);
  RkhsDrift drift = small_drift(2, rng);  // ambient dim 3, mismatched with 2
  EXPECT_THROW(apply_fpe_operator(zi, zi, eta, &drift, MatrixXd()), std::invalid_argument);
}

}  // namespace
