#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "mvss/core.hpp"

namespace mvss {

// ---------------------------------------------------------------------------
// l2,1 slab

/// log a_m, a_m = sqrt(pi) (Gamma(m+1) / Gamma(m/2+1))^(1/m).
inline double log_slab_norm_const(int m) {
  detail::require(m >= 1, "slab_norm_const: m must be at least 1");
  const double md = static_cast<double>(m);
  return 0.5 * std::log(std::numbers::pi) + (std::lgamma(md + 1.0) - std::lgamma(0.5 * md + 1.0)) / md;
}

inline double slab_norm_const(int m) { return std::exp(log_slab_norm_const(m)); }

class SlabConstantTable {
 public:
  explicit SlabConstantTable(int p_max) {
    detail::require(p_max >= 1, "SlabConstantTable: p_max must be at least 1");
    log_a_.reserve(static_cast<std::size_t>(p_max));
    for (int m = 1; m <= p_max; ++m) log_a_.push_back(log_slab_norm_const(m));
  }
  int p_max() const { return static_cast<int>(log_a_.size()); }
  double log_a(int m) const { return log_a_.at(static_cast<std::size_t>(m - 1)); }
  double a(int m) const { return std::exp(log_a(m)); }

 private:
  std::vector<double> log_a_;
};

/// Log slab density of stacked active blocks sharing one rate.
inline double log_slab_density(const Eigen::Ref<const Vector>& stacked, std::span<const int> sizes,
                               double lambda) {
  detail::require(lambda > 0.0, "log_slab_density: lambda must be positive");
  double out = 0.0;
  Eigen::Index pos = 0;
  for (int m : sizes) {
    detail::require(pos + m <= stacked.size(), "log_slab_density: block lengths exceed vector");
    out += m * (std::log(lambda) - log_slab_norm_const(m)) - lambda * stacked.segment(pos, m).norm();
    pos += m;
  }
  detail::require(pos == stacked.size(), "log_slab_density: block lengths do not cover vector");
  return out;
}

/// One block: uniform direction on the sphere, Gamma(m, rate lambda) radius.
template <class Rng>
Vector sample_slab_block(int m, double lambda, Rng& rng) {
  std::normal_distribution<double> z;
  Vector dir(m);
  double norm = 0.0;
  do {
    for (int i = 0; i < m; ++i) dir(i) = z(rng);
    norm = dir.norm();
  } while (norm == 0.0);
  std::gamma_distribution<double> radius(static_cast<double>(m), 1.0 / lambda);
  return dir * (radius(rng) / norm);
}

template <class Rng>
Vector sample_slab(std::span<const int> sizes, double lambda, Rng& rng) {
  detail::require(lambda > 0.0, "sample_slab: lambda must be positive");
  int total = 0;
  for (int m : sizes) total += m;
  Vector out(total);
  int pos = 0;
  for (int m : sizes) {
    out.segment(pos, m) = sample_slab_block(m, lambda, rng);
    pos += m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// dimension and support priors

/// pi(s) proportional to (G v n^p_max)^(-a s) on {0, ..., Gd}.
class DimensionPrior {
 public:
  DimensionPrior(int groups, int columns, int n, int p_max, double exponent)
      : G_(groups), d_(columns) {
    detail::require(groups >= 1 && columns >= 1 && p_max >= 1, "DimensionPrior: bad shape");
    detail::require(exponent > 0.0, "DimensionPrior: exponent must be positive");
    const double log_base = std::max(std::log(static_cast<double>(groups)),
                                     n > 0 ? p_max * std::log(static_cast<double>(n)) : 0.0);
    log_ratio_ = -exponent * log_base;
    const int top = groups * columns;
    std::vector<double> raw(static_cast<std::size_t>(top + 1));
    for (int s = 0; s <= top; ++s) raw[static_cast<std::size_t>(s)] = s * log_ratio_;
    const double lz = detail::log_sum_exp(raw);
    log_pmf_.resize(raw.size());
    for (std::size_t s = 0; s < raw.size(); ++s) log_pmf_[s] = raw[s] - lz;
  }

  int max_size() const { return G_ * d_; }
  int G() const { return G_; }
  int d() const { return d_; }

  /// log pi(s) - log pi(s - 1).
  double log_ratio() const { return log_ratio_; }

  double log_pmf(int s) const {
    detail::require(s >= 0 && s <= max_size(), "DimensionPrior: s out of range");
    return log_pmf_[static_cast<std::size_t>(s)];
  }

 private:
  int G_, d_;
  double log_ratio_ = 0.0;
  std::vector<double> log_pmf_;
};

inline double log_dimension_prior(int s, int groups, int columns, int n, int p_max, double exponent) {
  return DimensionPrior(groups, columns, n, p_max, exponent).log_pmf(s);
}

/// log pi(s) - log C(Gd, s).
inline double log_support_prior(const SupportIndex& S, const DimensionPrior& prior) {
  detail::require(S.G() == prior.G() && S.d() == prior.d(), "log_support_prior: shape mismatch");
  return prior.log_pmf(S.s()) - detail::log_binomial(prior.max_size(), S.s());
}

// ---------------------------------------------------------------------------
// covariance priors

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of diag(R) folded into Q.
template <class Rng>
Matrix sample_haar_orthogonal(int d, Rng& rng) {
  detail::require(d >= 1, "sample_haar_orthogonal: d must be positive");
  std::normal_distribution<double> z;
  Matrix A(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) A(r, c) = z(rng);
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ();
  const Matrix& R = qr.matrixQR();
  for (int i = 0; i < d; ++i)
    if (R(i, i) < 0.0) Q.col(i) = -Q.col(i);
  return Q;
}

inline double log_inverse_gaussian(double x, double mu, double shape) {
  detail::require(x > 0.0 && mu > 0.0 && shape > 0.0, "log_inverse_gaussian: arguments must be positive");
  return 0.5 * (std::log(shape) - std::log(2.0 * std::numbers::pi) - 3.0 * std::log(x)) -
         shape * (x - mu) * (x - mu) / (2.0 * mu * mu * x);
}

/// Michael-Schucany-Haas transformation sampler.
template <class Rng>
double sample_inverse_gaussian(double mu, double shape, Rng& rng) {
  detail::require(mu > 0.0 && shape > 0.0, "sample_inverse_gaussian: parameters must be positive");
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double v = z(rng);
  const double y = v * v;
  const double x = mu + mu * mu * y / (2.0 * shape) -
                   mu / (2.0 * shape) * std::sqrt(4.0 * mu * shape * y + mu * mu * y * y);
  return u(rng) <= mu / (mu + x) ? x : mu * mu / x;
}

namespace detail {

inline double log_multivariate_gamma(int d, double a) {
  double out = 0.25 * d * (d - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= d; ++j) out += std::lgamma(a + 0.5 * (1 - j));
  return out;
}

inline Eigen::LLT<Matrix> spd_factor(const Matrix& A, const char* who) {
  require(A.rows() == A.cols(), std::string(who) + ": matrix must be square");
  Eigen::LLT<Matrix> llt(A);
  require(llt.info() == Eigen::Success && A.isApprox(A.transpose(), 1e-10),
          std::string(who) + ": matrix is not symmetric positive definite");
  return llt;
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Bartlett-decomposition draw from W_d(nu, Psi), E[W] = nu Psi.
template <class Rng>
Matrix sample_wishart(double nu, const Matrix& psi, Rng& rng) {
  const int d = static_cast<int>(psi.rows());
  detail::require(nu > d - 1, "sample_wishart: dof must exceed d - 1");
  auto llt = detail::spd_factor(psi, "sample_wishart");
  std::normal_distribution<double> z;
  Matrix A = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    std::chi_squared_distribution<double> chi(nu - i);
    A(i, i) = std::sqrt(chi(rng));
    for (int j = 0; j < i; ++j) A(i, j) = z(rng);
  }
  const Matrix LA = llt.matrixL() * A;
  return LA * LA.transpose();
}

/// Density of Sigma when Sigma^-1 ~ W_d(nu, Phi^-1).
inline double log_inverse_wishart(const Matrix& sigma, double nu, const Matrix& phi) {
  const int d = static_cast<int>(sigma.rows());
  detail::require(phi.rows() == d, "log_inverse_wishart: dimension mismatch");
  detail::require(nu > d - 1, "log_inverse_wishart: dof must exceed d - 1");
  auto ls = detail::spd_factor(sigma, "log_inverse_wishart");
  auto lp = detail::spd_factor(phi, "log_inverse_wishart");
  const double trace = ls.solve(phi).trace();
  return 0.5 * nu * detail::log_det(lp) - 0.5 * nu * d * std::log(2.0) -
         detail::log_multivariate_gamma(d, 0.5 * nu) - 0.5 * (nu + d + 1.0) * detail::log_det(ls) -
         0.5 * trace;
}

template <class Rng>
Matrix sample_inverse_wishart(double nu, const Matrix& phi, Rng& rng) {
  auto lp = detail::spd_factor(phi, "sample_inverse_wishart");
  const Matrix phi_inv = lp.solve(Matrix::Identity(phi.rows(), phi.cols()));
  const Matrix W = sample_wishart(nu, 0.5 * (phi_inv + phi_inv.transpose()), rng);
  Eigen::LLT<Matrix> lw(W);
  Matrix out = lw.solve(Matrix::Identity(W.rows(), W.cols()));
  return 0.5 * (out + out.transpose());
}

/// (nu + n, Phi + sum_i r_i' r_i) for residual rows r_i.
inline WishartPrior iw_conjugate_update(double nu, const Matrix& phi, const Matrix& residuals) {
  detail::require(residuals.cols() == phi.rows(), "iw_conjugate_update: residual width differs from d");
  WishartPrior out{nu + static_cast<double>(residuals.rows()), phi + residuals.transpose() * residuals};
  out.scale = 0.5 * (out.scale + out.scale.transpose());
  detail::spd_factor(out.scale, "iw_conjugate_update");
  return out;
}

/// Same update from a precomputed Gram matrix sum_i r_i' r_i over n rows.
inline WishartPrior iw_conjugate_update_gram(double nu, const Matrix& phi, const Matrix& gram, int n) {
  detail::require(gram.rows() == phi.rows() && gram.cols() == phi.cols(),
                  "iw_conjugate_update: Gram matrix must be d x d");
  WishartPrior out{nu + n, phi + gram};
  out.scale = 0.5 * (out.scale + out.scale.transpose());
  detail::spd_factor(out.scale, "iw_conjugate_update");
  return out;
}

// ---------------------------------------------------------------------------
// Wishart eigenvalue tail bounds

struct WishartTailConfig {
  int dof = 0;      // nu
  Matrix psi;       // scale
  double t1 = 0.0;  // > nu d
  double t2 = 0.0;  // > 0
  double t3 = 0.0;  // in [0, 1]
  Vector a;         // ascending, nonnegative, length d
};

struct WishartTailReport {
  WishartTailConfig config;
  // Upper bounds on P(rho_d >= t1 ||Psi||) and P(rho_1 <= t2); lower bound
  // on P(a_k <= rho_k <= a_k (1 + t3) for all k). Logs are unclipped.
  double log_upper_largest = 0.0;
  double log_upper_smallest = 0.0;
  double log_lower_interval = 0.0;
  double upper_largest = 0.0;   // min(1, exp(log))
  double upper_smallest = 0.0;  // min(1, exp(log))
  double lower_interval = 0.0;  // exp(log), below one
  double empirical_largest = 0.0;
  double empirical_smallest = 0.0;
  double empirical_interval = 0.0;
  int draws = 0;

  bool largest_ok() const { return empirical_largest <= upper_largest; }
  bool smallest_ok() const { return empirical_smallest <= upper_smallest; }
  bool interval_ok() const { return empirical_interval >= lower_interval; }
  bool all_ok() const { return largest_ok() && smallest_ok() && interval_ok(); }
};

namespace detail {

inline void validate_tail_config(const WishartTailConfig& c) {
  const int d = static_cast<int>(c.psi.rows());
  require(d >= 1 && c.psi.cols() == d, "wishart_tail_bounds: Psi must be square");
  require(c.dof >= d, "wishart_tail_bounds: need integer dof >= d");
  require(c.t1 > static_cast<double>(c.dof) * d, "wishart_tail_bounds: need t1 > nu d");
  require(c.t2 > 0.0, "wishart_tail_bounds: need t2 > 0");
  require(c.t3 >= 0.0 && c.t3 <= 1.0, "wishart_tail_bounds: need 0 <= t3 <= 1");
  require(c.a.size() == d, "wishart_tail_bounds: need d interval anchors");
  for (int k = 0; k < d; ++k) {
    require(c.a(k) >= 0.0, "wishart_tail_bounds: anchors must be nonnegative");
    if (k > 0) require(c.a(k) >= c.a(k - 1), "wishart_tail_bounds: anchors must be ascending");
  }
  spd_factor(c.psi, "wishart_tail_bounds");
}

}  // namespace detail

/// Closed-form bounds only; empirical fields left at zero.
inline WishartTailReport wishart_tail_bounds(const WishartTailConfig& c) {
  detail::validate_tail_config(c);
  const double nu = c.dof;
  const double d = static_cast<double>(c.psi.rows());
  const double e = std::numbers::e;
  const double sqrt_pi = std::sqrt(std::numbers::pi);
  auto llt = detail::spd_factor(c.psi, "wishart_tail_bounds");
  const double logdet = detail::log_det(llt);
  const double op_norm = Eigen::SelfAdjointEigenSolver<Matrix>(c.psi).eigenvalues().maxCoeff();
  const double trace_inv = llt.solve(Matrix::Identity(c.psi.rows(), c.psi.cols())).trace();

  WishartTailReport r;
  r.config = c;
  const double nd = nu * d;
  r.log_upper_largest = 0.5 * nd * std::log(c.t1 / nd) + 0.5 * nd - 0.5 * c.t1;

  r.log_upper_smallest = 0.5 * d * (nu + d) * std::log((nu + d) / (2.0 * e)) +
                         d * std::log(e * (nu + d) / sqrt_pi) - 0.5 * (nu + d + 1.0) * std::log(2.0) +
                         0.5 * (nu - d - 1.0) * std::log(c.t2) - 0.5 * nu * logdet +
                         0.5 * (d - 1.0) * (nu + 1.0) * std::log(op_norm);

  const double a1t3 = c.a(0) * c.t3;
  if (a1t3 > 0.0) {
    r.log_lower_interval = -d * std::log(a1t3 * e * e * nu / (8.0 * sqrt_pi)) -
                           0.5 * nd * std::log(2.0 * nd / (e * a1t3)) -
                           0.5 * d * d * std::log(d / (2.0 * e)) - 0.5 * nu * logdet -
                           0.5 * c.a(0) * (1.0 + c.t3) * trace_inv;
  } else {
    r.log_lower_interval = -std::numeric_limits<double>::infinity();
  }
  r.upper_largest = std::exp(std::min(0.0, r.log_upper_largest));
  r.upper_smallest = std::exp(std::min(0.0, r.log_upper_smallest));
  r.lower_interval = std::exp(std::min(0.0, r.log_lower_interval));
  return r;
}

/// Bounds plus empirical event frequencies from `draws` Wishart samples.
template <class Rng>
WishartTailReport wishart_tail_bounds(const WishartTailConfig& c, int draws, Rng& rng) {
  WishartTailReport r = wishart_tail_bounds(c);
  detail::require(draws >= 1, "wishart_tail_bounds: need at least one draw");
  const int d = static_cast<int>(c.psi.rows());
  const double op_norm = Eigen::SelfAdjointEigenSolver<Matrix>(c.psi).eigenvalues().maxCoeff();
  int hit_large = 0, hit_small = 0, hit_interval = 0;
  for (int t = 0; t < draws; ++t) {
    const Matrix W = sample_wishart(static_cast<double>(c.dof), c.psi, rng);
    const Vector rho = Eigen::SelfAdjointEigenSolver<Matrix>(W, Eigen::EigenvaluesOnly).eigenvalues();
    if (rho(d - 1) >= c.t1 * op_norm) ++hit_large;
    if (rho(0) <= c.t2) ++hit_small;
    bool inside = true;
    for (int k = 0; k < d && inside; ++k)
      inside = rho(k) >= c.a(k) && rho(k) <= c.a(k) * (1.0 + c.t3);
    if (inside) ++hit_interval;
  }
  r.draws = draws;
  r.empirical_largest = static_cast<double>(hit_large) / draws;
  r.empirical_smallest = static_cast<double>(hit_small) / draws;
  r.empirical_interval = static_cast<double>(hit_interval) / draws;
  return r;
}

}  // namespace mvss
