#include <gtest/gtest.h>

#include <random>

#include "mvss/likelihood.hpp"
#include "mvss/stats.hpp"
#include "oracles.hpp"

using namespace mvss;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Matrix A(r, c);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
  return A;
}

Matrix random_spd(int d, std::mt19937_64& rng) {
  const Matrix A = random_matrix(d, d, rng);
  return A * A.transpose() / d + 0.5 * Matrix::Identity(d, d);
}

struct Pair {
  Matrix X, beta, beta0, sigma, sigma0;
};

Pair random_pair(int n, int p, int d, std::mt19937_64& rng) {
  Pair q;
  q.X = random_matrix(n, p, rng);
  q.beta = random_matrix(p, d, rng) * 0.3;
  q.beta0 = random_matrix(p, d, rng) * 0.3;
  q.sigma = random_spd(d, rng);
  q.sigma0 = random_spd(d, rng);
  return q;
}

// log f0(Y_i) - log f(Y_i) per row for Y_i drawn from f0
std::vector<double> log_ratio_draws(const Pair& q, int draws, std::mt19937_64& rng) {
  const int d = static_cast<int>(q.sigma0.rows());
  const Matrix L0 = Eigen::LLT<Matrix>(q.sigma0).matrixL();
  std::normal_distribution<double> z;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(draws) * q.X.rows());
  for (int t = 0; t < draws; ++t)
    for (Eigen::Index i = 0; i < q.X.rows(); ++i) {
      const Vector mu0 = (q.X.row(i) * q.beta0).transpose();
      const Vector mu = (q.X.row(i) * q.beta).transpose();
      Vector e(d);
      for (int k = 0; k < d; ++k) e(k) = z(rng);
      const Vector y = mu0 + L0 * e;
      out.push_back(oracle::mvn_logpdf(y, mu0, q.sigma0) - oracle::mvn_logpdf(y, mu, q.sigma));
    }
  return out;
}

}  // namespace

TEST(LogLikelihood, MatchesRowwiseOracle) {
  std::mt19937_64 rng(101);
  const Pair q = random_pair(12, 4, 3, rng);
  const Matrix Y = random_matrix(12, 3, rng);
  const Dataset data(q.X, Y);
  EXPECT_NEAR(log_likelihood(q.beta, q.sigma, data), oracle::log_likelihood(q.beta, q.sigma, q.X, Y), 1e-9);
  const CovarianceEigen ce = CovarianceEigen::from_matrix(q.sigma);
  EXPECT_NEAR(log_likelihood(q.beta, ce, data), oracle::log_likelihood(q.beta, q.sigma, q.X, Y), 1e-9);
}

TEST(LogLikelihood, RejectsBadInputs) {
  const Dataset data(Matrix::Zero(3, 2), Matrix::Zero(3, 2));
  EXPECT_THROW(log_likelihood(Matrix::Zero(3, 2), Matrix::Identity(2, 2), data), DimensionError);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  EXPECT_THROW(log_likelihood(Matrix::Zero(2, 2), bad, data), NotPositiveDefinite);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.5;
  EXPECT_THROW(log_likelihood(Matrix::Zero(2, 2), asym, data), NotPositiveDefinite);
}

TEST(KullbackLeibler, ZeroAtTruthAndMonteCarlo) {
  std::mt19937_64 rng(103);
  const Pair q = random_pair(6, 3, 2, rng);
  EXPECT_NEAR(kl_mean(q.beta0, q.sigma0, q.beta0, q.sigma0, q.X), 0.0, 1e-12);
  EXPECT_NEAR(kl_variation(q.beta0, q.sigma0, q.beta0, q.sigma0, q.X), 0.0, 1e-12);

  const auto lr = log_ratio_draws(q, 40000, rng);
  // the per-observation mean and variance of the log ratio, averaged over rows
  const double mc_mean = stats::mean(lr);
  EXPECT_NEAR(kl_mean(q.beta, q.sigma, q.beta0, q.sigma0, q.X), mc_mean, 4.0 * stats::std_error(lr));

  // V is the average over rows of the within-row variance
  double within = 0.0;
  const auto rows = static_cast<std::size_t>(q.X.rows());
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> r;
    for (std::size_t t = i; t < lr.size(); t += rows) r.push_back(lr[t]);
    within += stats::variance(r);
  }
  within /= static_cast<double>(rows);
  EXPECT_NEAR(kl_variation(q.beta, q.sigma, q.beta0, q.sigma0, q.X), within, 0.05 * within);
}

TEST(KullbackLeibler, ScalarClosedForm) {
  // d = 1, one observation x = 1: KL = 0.5 (s0/s - 1 - log(s0/s) + (b - b0)^2 / s)
  const Matrix X = Matrix::Ones(1, 1);
  const Matrix b = Matrix::Constant(1, 1, 0.7), b0 = Matrix::Constant(1, 1, -0.2);
  const Matrix s = Matrix::Constant(1, 1, 2.0), s0 = Matrix::Constant(1, 1, 0.5);
  const double r = 0.25;
  EXPECT_NEAR(kl_mean(b, s, b0, s0, X), 0.5 * (r - 1.0 - std::log(r) + 0.81 / 2.0), 1e-12);
  // V = 0.5 (r - 1)^2 + (b - b0)^2 s0 / s^2
  EXPECT_NEAR(kl_variation(b, s, b0, s0, X), 0.5 * (r - 1.0) * (r - 1.0) + 0.81 * 0.5 / 4.0, 1e-12);
}

TEST(RenyiHalf, EqualsSumOfNegativeLogAffinities) {
  std::mt19937_64 rng(107);
  for (int rep = 0; rep < 5; ++rep) {
    const Pair q = random_pair(9, 4, 3, rng);
    const DivergenceBreakdown r = renyi_half(q.beta, q.sigma, q.beta0, q.sigma0, q.X);
    double want = 0.0;
    for (Eigen::Index i = 0; i < q.X.rows(); ++i)
      want -= std::log(oracle::gaussian_affinity((q.X.row(i) * q.beta).transpose(), q.sigma,
                                                 (q.X.row(i) * q.beta0).transpose(), q.sigma0));
    EXPECT_NEAR(r.total, want, 1e-9 * std::max(1.0, want));
    EXPECT_NEAR(r.total, r.cov_term + r.mean_term, 1e-12);
    EXPECT_GE(r.cov_term, 0.0);
    EXPECT_GE(r.mean_term, 0.0);
  }
}

TEST(RenyiHalf, CovarianceTermVanishesAtEqualCovariance) {
  std::mt19937_64 rng(109);
  const Pair q = random_pair(5, 2, 2, rng);
  const DivergenceBreakdown r = renyi_half(q.beta, q.sigma0, q.beta0, q.sigma0, q.X);
  EXPECT_NEAR(r.cov_term, 0.0, 1e-12);
  const Matrix D = q.X * (q.beta - q.beta0);
  const Matrix inv = oracle::inverse_lu(q.sigma0);
  double quad = 0.0;
  for (Eigen::Index i = 0; i < D.rows(); ++i) quad += D.row(i) * inv * D.row(i).transpose();
  EXPECT_NEAR(r.mean_term, quad / 8.0, 1e-10);
}

TEST(HellingerCov, MatchesQuadratureForScalars) {
  for (auto [v, v0] : {std::pair{1.0, 1.0}, std::pair{0.3, 2.0}, std::pair{5.0, 0.8}}) {
    const double h2 = hellinger_sq_cov(Matrix::Constant(1, 1, v), Matrix::Constant(1, 1, v0));
    EXPECT_NEAR(h2, 0.5 * oracle::hellinger_sq_1d_quadrature(0.0, v, 0.0, v0), 1e-9) << v << " " << v0;
  }
  EXPECT_THROW(hellinger_sq_cov(Matrix::Identity(2, 2), Matrix::Identity(3, 3)), DimensionError);
}

TEST(HellingerCov, BoundedAndSymmetric) {
  std::mt19937_64 rng(113);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_spd(3, rng), b = random_spd(3, rng);
    const double h = hellinger_sq_cov(a, b);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    EXPECT_NEAR(h, hellinger_sq_cov(b, a), 1e-12);
  }
}

TEST(SpdFactor, SolveAndLogDet) {
  std::mt19937_64 rng(127);
  const Matrix A = random_spd(4, rng);
  const SpdFactor f(A);
  EXPECT_NEAR(f.log_det(), oracle::log_det_lu(A), 1e-10);
  EXPECT_LE((f.inverse() - oracle::inverse_lu(A)).norm(), 1e-10);
  const Matrix R = random_matrix(3, 4, rng);
  EXPECT_NEAR(f.row_quadratic(R), (R * oracle::inverse_lu(A) * R.transpose()).trace(), 1e-10);
  EXPECT_THROW(SpdFactor(Matrix(0, 0)), DimensionError);
}
