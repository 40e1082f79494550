#include <gtest/gtest.h>

#include <random>

#include "mvss/core.hpp"
#include "oracles.hpp"

using namespace mvss;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Matrix A(r, c);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
  return A;
}

}  // namespace

TEST(GroupStructure, OffsetsAndSizes) {
  GroupStructure g({2, 1, 3});
  EXPECT_EQ(g.p(), 6);
  EXPECT_EQ(g.G(), 3);
  EXPECT_EQ(g.p_max(), 3);
  EXPECT_EQ(g.offset(2), 3);
  EXPECT_EQ(g.group_of(0), 0);
  EXPECT_EQ(g.group_of(2), 1);
  EXPECT_EQ(g.group_of(5), 2);
  EXPECT_THROW(GroupStructure({2, 0}), DimensionError);
  EXPECT_THROW(GroupStructure(std::vector<int>{}), DimensionError);
}

TEST(Dataset, RejectsMismatchAndNonFinite) {
  EXPECT_THROW(Dataset(Matrix::Zero(3, 2), Matrix::Zero(2, 1)), DimensionError);
  Matrix X = Matrix::Zero(2, 2);
  X(0, 0) = std::nan("");
  EXPECT_THROW(Dataset(X, Matrix::Zero(2, 1)), DimensionError);
}

TEST(GroupOperatorNorm, Examples) {
  EXPECT_NEAR(group_operator_norm(Matrix::Identity(3, 3), GroupStructure::uniform(3, 1)), 1.0, 1e-12);
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = 2.0;
  D(1, 1) = 1.0;
  EXPECT_NEAR(group_operator_norm(D, GroupStructure::uniform(2, 1)), 2.0, 1e-12);
}

TEST(GroupOperatorNorm, MatchesIndependentSvdAndRowPermutation) {
  std::mt19937_64 rng(3);
  const Matrix X = random_matrix(5, 4, rng);
  const GroupStructure g({2, 2});
  // power iteration on each block's Gram matrix
  double expected = 0.0;
  for (int j = 0; j < 2; ++j) {
    const Matrix A = X.middleCols(2 * j, 2).transpose() * X.middleCols(2 * j, 2);
    Vector v = Vector::Ones(2);
    for (int it = 0; it < 500; ++it) v = (A * v).normalized();
    expected = std::max(expected, std::sqrt(v.dot(A * v)));
  }
  EXPECT_NEAR(group_operator_norm(X, g), expected, 1e-10 * expected);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 5, rng);
  EXPECT_NEAR(group_operator_norm(perm * X, g), group_operator_norm(X, g), 1e-12);
  EXPECT_THROW(group_operator_norm(X, GroupStructure({3})), DimensionError);
}

TEST(L21Norm, Examples) {
  const GroupStructure one({2});
  EXPECT_DOUBLE_EQ(l21_norm(Vector::Zero(2), one), 0.0);
  Vector v(2);
  v << 3.0, 4.0;
  EXPECT_NEAR(l21_norm(v, one), 5.0, 1e-15);
  Vector w(3);
  w << -1.0, 2.0, -3.0;
  EXPECT_NEAR(l21_norm(w, GroupStructure::uniform(3, 1)), w.lpNorm<1>(), 1e-15);
  EXPECT_THROW(l21_norm(w, one), DimensionError);
}

TEST(L21Norm, TriangleAndDominatesL2) {
  std::mt19937_64 rng(5);
  const GroupStructure g({1, 3, 2});
  for (int t = 0; t < 200; ++t) {
    const Vector a = random_matrix(6, 1, rng), b = random_matrix(6, 1, rng);
    EXPECT_LE(l21_norm(a + b, g), l21_norm(a, g) + l21_norm(b, g) + 1e-12);
    EXPECT_GE(l21_norm(a, g), a.norm() - 1e-12);
  }
}

TEST(Vectorize, DesignBlockReproducesRowProduct) {
  std::mt19937_64 rng(7);
  const Matrix beta = random_matrix(3, 2, rng);
  const mvss::RowVector x = random_matrix(1, 3, rng);
  const mvss::RowVector got = vectorize(beta) * design_block(x, 2);
  const mvss::RowVector want = x * beta;
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(got(k), want(k), 1e-12);
  EXPECT_TRUE((design_block(x, 2) - oracle::kron_design(x, 2)).norm() == 0.0);
  EXPECT_TRUE((design_block(x, 1) - Matrix(x.transpose())).norm() == 0.0);
  EXPECT_DOUBLE_EQ((vectorize(Matrix::Zero(3, 2)) * design_block(x, 2)).norm(), 0.0);
}

TEST(SupportIndex, SlotsAndCounts) {
  const GroupStructure g({1, 2, 3});
  SupportIndex S = SupportIndex::from_sets(3, {{0, 2}, {1}});
  EXPECT_EQ(S.s(), 3);
  EXPECT_EQ(S.p_S(g), 1 + 3 + 2);
  EXPECT_TRUE(S.contains(0, 2));
  EXPECT_FALSE(S.contains(1, 2));
  EXPECT_EQ(S.column(0), (std::vector<int>{0, 2}));
  EXPECT_EQ(S.inactive_slots().size(), 3u);
  S.insert(0, 0);
  EXPECT_EQ(S.s(), 3);
  S.erase(0, 0);
  EXPECT_EQ(S.s(), 2);
  EXPECT_THROW(SupportIndex::from_sets(3, {{1, 1}}), DimensionError);
  EXPECT_THROW(S.insert(2, 0), DimensionError);
}

TEST(CoefficientMatrix, SupportIsIdempotentAndEnforced) {
  const GroupStructure g({2, 1, 2});
  Matrix v = Matrix::Zero(5, 2);
  v(0, 0) = 1.0;
  v(4, 1) = -2.0;
  const CoefficientMatrix c = CoefficientMatrix::from_values(g, v);
  EXPECT_EQ(c.support(), support_of(c.values(), g));
  EXPECT_EQ(c.support().s(), 2);
  EXPECT_TRUE(c.support().contains(0, 0));
  EXPECT_TRUE(c.support().contains(1, 2));
  EXPECT_THROW(CoefficientMatrix::with_support(g, v, SupportIndex(3, 2)), DimensionError);
  CoefficientMatrix e(g, 2);
  Vector b(1);
  b << 0.5;
  e.set_block(g, 1, 1, b);
  EXPECT_EQ(e.support(), support_of(e.values(), g));
  e.clear_block(g, 1, 1);
  EXPECT_EQ(e.support().s(), 0);
}

TEST(CovarianceEigen, ValidatesAndReconstructs) {
  std::mt19937_64 rng(11);
  const Matrix A = random_matrix(3, 3, rng);
  const Matrix S = A * A.transpose() + Matrix::Identity(3, 3);
  const CovarianceEigen c = CovarianceEigen::from_matrix(S);
  EXPECT_LE((c.reconstruct() - S).norm(), 1e-10);
  EXPECT_LE((c.P().transpose() * c.P() - Matrix::Identity(3, 3)).norm(), 1e-10);
  Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(c.reconstruct()).eigenvalues();
  Vector D = c.D();
  std::sort(D.data(), D.data() + 3);
  EXPECT_LE((ev - D).norm(), 1e-10);
  EXPECT_THROW(CovarianceEigen(2.0 * Matrix::Identity(2, 2), Vector::Ones(2)), DimensionError);
  EXPECT_THROW(CovarianceEigen(Matrix::Identity(2, 2), -Vector::Ones(2)), DimensionError);
}

TEST(HyperParams, Validation) {
  HyperParams hp;
  hp.lambda = Vector::Ones(2);
  EXPECT_NO_THROW(hp.validate(2));
  EXPECT_THROW(hp.validate(3), DimensionError);
  hp.lambda(0) = 0.0;
  EXPECT_THROW(hp.validate(2), DimensionError);
  hp.lambda(0) = 1.0;
  hp.wishart = WishartPrior{0.5, Matrix::Identity(2, 2)};
  EXPECT_THROW(hp.validate(2), DimensionError);
}

TEST(DefaultLambda, MatchesFormula) {
  std::mt19937_64 rng(13);
  const Matrix X = random_matrix(50, 6, rng);
  const GroupStructure g = GroupStructure::uniform(3, 2);
  EXPECT_NEAR(default_lambda(X, g), group_operator_norm(X, g) / std::max(std::sqrt(3.0), 50.0), 1e-14);
  EXPECT_GT(default_lambda(Matrix::Zero(0, 6), g), 0.0);
}
