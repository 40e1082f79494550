#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mvss/metrics.hpp"
#include "oracles.hpp"

using namespace mvss;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Matrix A(r, c);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
  return A;
}

Matrix orthonormal_columns(int n, int p, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(n, p, rng));
  return qr.householderQ() * Matrix::Identity(n, p);
}

}  // namespace

TEST(RestrictedEigenvalue, OrthonormalDesignIsOne) {
  std::mt19937_64 rng(301);
  const Matrix X = orthonormal_columns(20, 6, rng);
  const PhiResult r = restricted_eigenvalue(X, GroupStructure::uniform(3, 2), 2);
  EXPECT_NEAR(r.value, 1.0, 1e-10);
  EXPECT_FALSE(r.approximate);
  EXPECT_EQ(r.subsets, 3);
}

TEST(RestrictedEigenvalue, MatchesGeneralSupportSearch) {
  std::mt19937_64 rng(303);
  const GroupStructure g({1, 2, 1, 2, 1});
  Matrix X = random_matrix(15, 7, rng);
  X.col(3) = X.col(0) + 0.3 * X.col(3);  // correlated groups
  for (int s : {1, 2, 3}) {
    const PhiResult exact = restricted_eigenvalue(X, g, s);
    const double searched = oracle::restricted_eigenvalue_search(X, g, 2, s, 20000, 305 + s);
    EXPECT_NEAR(exact.value, searched, 1e-9 * searched) << s;
  }
}

TEST(RestrictedEigenvalue, CollinearGroupsGiveZeroAndSearchIsUpperBound) {
  std::mt19937_64 rng(307);
  Matrix X = random_matrix(30, 4, rng);
  X.col(2) = X.col(0);
  const GroupStructure g = GroupStructure::uniform(4, 1);
  const double top = X.colwise().squaredNorm().maxCoeff();
  EXPECT_NEAR(restricted_eigenvalue(X, g, 1).value, X.colwise().squaredNorm().minCoeff() / top, 1e-12);
  EXPECT_LT(restricted_eigenvalue(X, g, 2).value, 1e-12);

  const Matrix Z = random_matrix(40, 12, rng);
  const GroupStructure h = GroupStructure::uniform(12, 1);
  const PhiResult exact = restricted_eigenvalue(Z, h, 4);
  const PhiResult approx = restricted_eigenvalue(Z, h, 4, 100);
  EXPECT_TRUE(approx.approximate);
  EXPECT_GE(approx.value, exact.value - 1e-12);
  EXPECT_THROW(restricted_eigenvalue(Matrix::Zero(3, 2), GroupStructure::uniform(2, 1), 1), DimensionError);
}

TEST(RestrictedEigenvalue, DecreasesInSize) {
  std::mt19937_64 rng(309);
  const Matrix X = random_matrix(25, 8, rng);
  const GroupStructure g = GroupStructure::uniform(4, 2);
  double prev = 1e300;
  for (int s = 1; s <= 6; ++s) {
    const double v = restricted_eigenvalue(X, g, s).value;
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
}

TEST(CompatibilityNumber, OrthonormalScalarGroupsGiveOne) {
  std::mt19937_64 rng(311);
  const Matrix X = orthonormal_columns(30, 5, rng);
  const PhiResult r = compatibility_number(X, GroupStructure::uniform(5, 1), 3);
  EXPECT_NEAR(r.value, 1.0, 1e-6);
  EXPECT_TRUE(r.approximate);
}

// Two scalar groups: the l2,1 ratio is a function of one angle, so a fine
// grid gives the answer to high accuracy.
TEST(CompatibilityNumber, MatchesAngularGridForPairs) {
  std::mt19937_64 rng(313);
  const Matrix X = random_matrix(20, 2, rng);
  const GroupStructure g = GroupStructure::uniform(2, 1);
  const Matrix A = X.transpose() * X;
  const double scale = std::pow(std::max(X.col(0).norm(), X.col(1).norm()), 2);
  double best = std::min(A(0, 0), A(1, 1)) / scale;
  for (int i = 0; i < 200000; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 200000.0;
    Vector b(2);
    b << std::cos(t), std::sin(t);
    const double l1 = std::abs(b(0)) + std::abs(b(1));
    best = std::min(best, 2.0 * b.dot(A * b) / (l1 * l1) / scale);
  }
  EXPECT_NEAR(compatibility_number(X, g, 2).value, best, 1e-6 * best);
}

TEST(CompatibilityNumber, DominatesRestrictedEigenvalue) {
  std::mt19937_64 rng(317);
  const Matrix X = random_matrix(30, 9, rng);
  const GroupStructure g({2, 3, 1, 2, 1});
  for (int s : {1, 2, 3}) EXPECT_GE(compatibility_number(X, g, s).value, restricted_eigenvalue(X, g, s).value - 1e-10);
}

TEST(Rates, FormulasOnKnownInputs) {
  const double l50 = std::log(50.0), l100 = std::log(100.0);
  EXPECT_NEAR(contraction_rate(100, 50, 2, 2, 3), std::sqrt(std::max({3 * l50, 6 * l100, 4 * l100}) / 100.0), 1e-14);
  EXPECT_NEAR(dimension_threshold(100, 50, 2, 2, 3), 3.0, 1e-14);
  EXPECT_NEAR(dimension_threshold(100, 50, 6, 1, 1), 36.0 * l100 / std::max(l50, l100), 1e-12);
  EXPECT_EQ(restricted_size(100, 50, 2, 2, 3, 1.0), 6);
  EXPECT_NEAR(rate_log_complexity(10, 1000, 1), std::log(1000.0), 1e-14);

  RateInputs in;
  in.n = 100;
  in.G = 50;
  in.d = 2;
  in.p_max = 2;
  in.s0 = 3;
  in.x_norm = 2.0;
  in.phi_l2_sq = 0.25;
  in.lambda_max = 0.5;
  in.constants.M3 = 2.0;
  const RateSummary r = theoretical_rates(in);
  EXPECT_NEAR(r.beta_min_threshold, 2.0 * 100.0 * r.eps_n * r.eps_n / (4.0 * 0.25), 1e-12);
  EXPECT_NEAR(r.beta_bar, 3.0 * 2.0 * l100 / 0.5, 1e-12);
  in.phi_l2_sq = 0.0;
  EXPECT_TRUE(std::isinf(theoretical_rates(in).beta_min_threshold));
  in.n = 1;
  EXPECT_THROW(theoretical_rates(in), DimensionError);
  const auto j = to_json(r);
  EXPECT_NEAR(j.at("eps_n").get<double>(), r.eps_n, 1e-15);
}

TEST(Rates, DesignOverloadFillsNormAndPhi) {
  std::mt19937_64 rng(319);
  const Matrix X = random_matrix(60, 8, rng);
  const GroupStructure g = GroupStructure::uniform(4, 2);
  const RateSummary r = theoretical_rates(X, g, 2, 1, 0.3, RateConstants{});
  EXPECT_NEAR(r.inputs.x_norm, group_operator_norm(X, g), 1e-12);
  EXPECT_NEAR(r.inputs.phi_l2_sq, restricted_eigenvalue(X, g, restricted_size(60, 4, 2, 2, 1, 1.0)).value, 1e-12);
}

TEST(Recovery, LossesAndSelection) {
  const GroupStructure g({2, 1});
  Matrix X = Matrix::Identity(3, 3);
  X(0, 1) = 1.0;
  Matrix b(3, 2), b0 = Matrix::Zero(3, 2);
  b << 3, 0, 4, 0, 0, -1;
  const RecoveryLosses l = recovery_report(b, b0, X, g);
  EXPECT_NEAR(l.frobenius, 26.0, 1e-14);
  EXPECT_NEAR(l.prediction, (X * b).squaredNorm(), 1e-14);
  EXPECT_NEAR(l.l21_sq, 36.0, 1e-14);

  const SupportIndex truth = SupportIndex::from_sets(2, {{0}, {1}});
  const SelectionReport same = selection_report(truth, truth);
  EXPECT_TRUE(same.exact);
  const SelectionReport off = selection_report(SupportIndex::from_sets(2, {{0, 1}, {}}), truth);
  EXPECT_FALSE(off.exact);
  EXPECT_EQ(off.missed, 1);
  EXPECT_EQ(off.false_groups, 1);
  EXPECT_THROW(selection_report(SupportIndex(3, 2), truth), DimensionError);

  const auto hist = effective_dimension({truth, truth, SupportIndex(2, 2)}, 2, 2);
  EXPECT_EQ(hist, (std::vector<long>{1, 0, 2, 0, 0}));
}
