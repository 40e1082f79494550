#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "mvss/core.hpp"

namespace mvss {

class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky factor of an SPD matrix; construction fails loudly otherwise.
class SpdFactor {
 public:
  explicit SpdFactor(const Matrix& A, const char* who = "SpdFactor") {
    if (A.rows() != A.cols() || A.rows() == 0)
      throw DimensionError(std::string(who) + ": matrix must be square and nonempty");
    if (!A.allFinite() || !A.isApprox(A.transpose(), 1e-9))
      throw NotPositiveDefinite(std::string(who) + ": matrix is not symmetric");
    llt_.compute(A);
    if (llt_.info() != Eigen::Success || (llt_.matrixLLT().diagonal().array() <= 0.0).any())
      throw NotPositiveDefinite(std::string(who) + ": matrix is not positive definite");
    log_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  int dim() const { return static_cast<int>(llt_.rows()); }
  double log_det() const { return log_det_; }
  Matrix solve(const Matrix& B) const { return llt_.solve(B); }
  Matrix inverse() const { return llt_.solve(Matrix::Identity(dim(), dim())); }

  /// ||L^-1 R'||_F^2 = sum_i r_i A^-1 r_i' over the rows of R.
  double row_quadratic(const Matrix& R) const {
    if (R.rows() == 0) return 0.0;
    return llt_.matrixL().solve(R.transpose()).squaredNorm();
  }

 private:
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

/// Gaussian log-likelihood for rows Y_i ~ N(X_i beta, Sigma).
inline double log_likelihood(const Matrix& beta, const Matrix& sigma, const Dataset& data) {
  detail::require(beta.rows() == data.p() && beta.cols() == data.d(),
                  "log_likelihood: beta must be p x d");
  detail::require(sigma.rows() == data.d(), "log_likelihood: Sigma must be d x d");
  const SpdFactor f(sigma, "log_likelihood");
  const double n = data.n(), d = data.d();
  const Matrix R = data.Y - data.X * beta;
  return -0.5 * n * d * std::log(2.0 * std::numbers::pi) - 0.5 * n * f.log_det() -
         0.5 * f.row_quadratic(R);
}

inline double log_likelihood(const CoefficientMatrix& beta, const CovarianceEigen& sigma,
                             const Dataset& data) {
  return log_likelihood(beta.values(), sigma.reconstruct(), data);
}

inline double log_likelihood(const Matrix& beta, const CovarianceEigen& sigma, const Dataset& data) {
  return log_likelihood(beta, sigma.reconstruct(), data);
}

namespace detail {

inline void check_pair(const Matrix& beta, const Matrix& sigma, const Matrix& beta0,
                       const Matrix& sigma0, const Matrix& X, const char* who) {
  require(beta.rows() == X.cols() && beta0.rows() == X.cols(), std::string(who) + ": beta rows differ from p");
  require(beta.cols() == beta0.cols(), std::string(who) + ": beta column counts differ");
  require(sigma.rows() == beta.cols() && sigma0.rows() == beta.cols(),
          std::string(who) + ": covariances must be d x d");
}

}  // namespace detail

/// n^-1 K(f_0, f) for the product of row densities.
inline double kl_mean(const Matrix& beta, const Matrix& sigma, const Matrix& beta0,
                      const Matrix& sigma0, const Matrix& X) {
  detail::check_pair(beta, sigma, beta0, sigma0, X, "kl_mean");
  const SpdFactor f(sigma, "kl_mean"), f0(sigma0, "kl_mean");
  const double d = static_cast<double>(sigma.rows());
  const double trace = f.solve(sigma0).trace();
  const double log_det_ratio = f0.log_det() - f.log_det();  // log det(Sigma^-1 Sigma0)
  double mean_part = 0.0;
  if (X.rows() > 0) mean_part = f.row_quadratic(X * (beta - beta0)) / static_cast<double>(X.rows());
  return std::max(0.0, 0.5 * (trace - d - log_det_ratio + mean_part));
}

/// n^-1 V(f_0, f), the Kullback-Leibler variation.
inline double kl_variation(const Matrix& beta, const Matrix& sigma, const Matrix& beta0,
                           const Matrix& sigma0, const Matrix& X) {
  detail::check_pair(beta, sigma, beta0, sigma0, X, "kl_variation");
  const SpdFactor f(sigma, "kl_variation");
  SpdFactor{sigma0, "kl_variation"};
  const double d = static_cast<double>(sigma.rows());
  const Matrix M = f.solve(sigma0);  // Sigma^-1 Sigma0
  const double cov_part = 0.5 * ((M * M).trace() - 2.0 * M.trace() + d);
  double mean_part = 0.0;
  if (X.rows() > 0) {
    // rows of Delta Sigma^-1, weighted by Sigma0
    const Matrix W = f.solve((X * (beta - beta0)).transpose());  // d x n
    mean_part = (W.transpose() * sigma0).cwiseProduct(W.transpose()).sum() / static_cast<double>(X.rows());
  }
  return std::max(0.0, cov_part + mean_part);
}

struct DivergenceBreakdown {
  double cov_term = 0.0;   // n times the log-determinant part
  double mean_term = 0.0;  // (1/8) sum_i of the mean quadratic
  double total = 0.0;      // sum_i rho(f_i, f_0i)
};

/// Renyi-1/2 divergence summed over rows, split into covariance and mean parts.
inline DivergenceBreakdown renyi_half(const Matrix& beta, const Matrix& sigma, const Matrix& beta0,
                                      const Matrix& sigma0, const Matrix& X) {
  detail::check_pair(beta, sigma, beta0, sigma0, X, "renyi_half");
  const SpdFactor f(sigma, "renyi_half"), f0(sigma0, "renyi_half");
  const SpdFactor fbar(0.5 * (sigma + sigma0), "renyi_half");
  const double n = static_cast<double>(X.rows());
  DivergenceBreakdown out;
  const double per_row = 0.5 * fbar.log_det() - 0.25 * f.log_det() - 0.25 * f0.log_det();
  out.cov_term = std::max(0.0, n * per_row);
  out.mean_term = X.rows() > 0 ? fbar.row_quadratic(X * (beta - beta0)) / 8.0 : 0.0;
  out.total = out.cov_term + out.mean_term;
  return out;
}

/// 1 - det(S)^(1/4) det(S0)^(1/4) / det((S + S0) / 2)^(1/2).
inline double hellinger_sq_cov(const Matrix& sigma, const Matrix& sigma0) {
  detail::require(sigma.rows() == sigma0.rows(), "hellinger_sq_cov: dimension mismatch");
  const SpdFactor f(sigma, "hellinger_sq_cov"), f0(sigma0, "hellinger_sq_cov");
  const SpdFactor fbar(0.5 * (sigma + sigma0), "hellinger_sq_cov");
  const double log_aff = 0.25 * f.log_det() + 0.25 * f0.log_det() - 0.5 * fbar.log_det();
  return std::clamp(-std::expm1(std::min(0.0, log_aff)), 0.0, 1.0);
}

}  // namespace mvss
