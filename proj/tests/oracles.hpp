#pragma once

// Test-side reference computations. They avoid the library's factorization
// paths (LU instead of Cholesky, explicit Kronecker designs, SVD instead of
// symmetric eigensolvers) so that agreement is evidence rather than echo.

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mvss/core.hpp"

namespace oracle {

using mvss::GroupStructure;
using mvss::Matrix;
using mvss::SupportIndex;
using mvss::Vector;

inline double log_det_lu(const Matrix& A) {
  Eigen::FullPivLU<Matrix> lu(A);
  const Matrix& U = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) s += std::log(std::abs(U(i, i)));
  return s;
}

inline Matrix inverse_lu(const Matrix& A) { return Eigen::FullPivLU<Matrix>(A).inverse(); }

inline double mvn_logpdf(const Vector& x, const Vector& mu, const Matrix& sigma) {
  const double d = static_cast<double>(x.size());
  const Vector r = x - mu;
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det_lu(sigma) - 0.5 * r.dot(inverse_lu(sigma) * r);
}

inline double log_likelihood(const Matrix& beta, const Matrix& sigma, const Matrix& X, const Matrix& Y) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out += mvn_logpdf(Y.row(i).transpose(), (X.row(i) * beta).transpose(), sigma);
  return out;
}

/// Bhattacharyya coefficient of two Gaussians from explicit inverses.
inline double gaussian_affinity(const Vector& m1, const Matrix& S1, const Vector& m2, const Matrix& S2) {
  const Matrix Sb = 0.5 * (S1 + S2);
  const Vector dm = m1 - m2;
  const double q = dm.dot(inverse_lu(Sb) * dm);
  return std::exp(0.25 * log_det_lu(S1) + 0.25 * log_det_lu(S2) - 0.5 * log_det_lu(Sb) - q / 8.0);
}

/// Squared Hellinger distance int (sqrt f - sqrt g)^2 for univariate
/// Gaussians by composite Simpson quadrature.
inline double hellinger_sq_1d_quadrature(double m1, double v1, double m2, double v2, int panels = 200000) {
  const double sd = std::sqrt(std::max(v1, v2));
  const double lo = std::min(m1, m2) - 40.0 * sd, hi = std::max(m1, m2) + 40.0 * sd;
  auto f = [&](double x) {
    const double a = std::exp(-0.25 * (x - m1) * (x - m1) / v1) / std::pow(2.0 * std::numbers::pi * v1, 0.25);
    const double b = std::exp(-0.25 * (x - m2) * (x - m2) / v2) / std::pow(2.0 * std::numbers::pi * v2, 0.25);
    return (a - b) * (a - b);
  };
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int i = 1; i < panels; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// X~_i = I_d kron X_i' built entry by entry.
inline Matrix kron_design(const Eigen::Ref<const mvss::RowVector>& x, int d) {
  const auto p = x.size();
  Matrix out = Matrix::Zero(p * d, d);
  for (int k = 0; k < d; ++k)
    for (Eigen::Index r = 0; r < p; ++r) out(k * p + r, k) = x(r);
  return out;
}

/// Indices into Vec(beta) covered by the support, in slot order.
inline std::vector<int> vec_indices(const SupportIndex& S, const GroupStructure& g) {
  std::vector<int> idx;
  for (int sl : S.slots()) {
    const int k = sl / g.G(), j = sl % g.G();
    for (int c = 0; c < g.size(j); ++c) idx.push_back(k * g.p() + g.offset(j) + c);
  }
  return idx;
}

struct Gls {
  Vector beta;
  Matrix gamma;
};

/// GLS over the support from explicit Kronecker designs and an LU solve.
inline Gls gls(const SupportIndex& S, const Matrix& X, const Matrix& Y, const GroupStructure& g, const Matrix& sigma0) {
  const int d = static_cast<int>(Y.cols());
  const auto idx = vec_indices(S, g);
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Matrix omega = inverse_lu(sigma0);
  Matrix gamma = Matrix::Zero(m, m);
  Vector rhs = Vector::Zero(m);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Matrix Xt = kron_design(X.row(i), d);
    Matrix XS(m, d);
    for (Eigen::Index a = 0; a < m; ++a) XS.row(a) = Xt.row(idx[static_cast<std::size_t>(a)]);
    gamma += XS * omega * XS.transpose();
    rhs += XS * omega * Y.row(i).transpose();
  }
  Gls out;
  out.gamma = gamma;
  out.beta = m > 0 ? Vector(Eigen::FullPivLU<Matrix>(gamma).solve(rhs)) : Vector(0);
  return out;
}

inline double log_slab_const(int m) {
  return 0.5 * std::log(std::numbers::pi) + (std::lgamma(m + 1.0) - std::lgamma(0.5 * m + 1.0)) / m;
}

/// Exact support posterior at known Sigma0 by enumeration of all 2^(Gd)
/// supports. Within a support the likelihood is Gaussian in the active
/// coefficients, so the marginal is exp(l_hat) (2 pi)^(m/2) det(Gamma)^(-1/2)
/// E[slab(b)] under b ~ N(b_hat, Gamma^-1); the expectation is estimated
/// with `draws` Gaussian draws.
inline std::map<SupportIndex, double> brute_force_support_posterior(const Matrix& X, const Matrix& Y,
                                                                    const GroupStructure& g, const Matrix& sigma0,
                                                                    const Vector& lambda, double dim_exponent,
                                                                    int draws, std::uint64_t seed) {
  const int G = g.G(), d = static_cast<int>(Y.cols()), n = static_cast<int>(X.rows());
  const int total = G * d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const double log_base = std::max(std::log(static_cast<double>(G)), n > 0 ? g.p_max() * std::log(double(n)) : 0.0);
  std::vector<double> log_pi(static_cast<std::size_t>(total + 1));
  double norm = 0.0;
  for (int s = 0; s <= total; ++s) norm += std::exp(-dim_exponent * log_base * s);
  for (int s = 0; s <= total; ++s) log_pi[static_cast<std::size_t>(s)] = -dim_exponent * log_base * s - std::log(norm);
  auto log_choose = [](int a, int b) { return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0); };

  std::map<SupportIndex, double> logw;
  double top = -1e300;
  for (int mask = 0; mask < (1 << total); ++mask) {
    SupportIndex S(G, d);
    for (int sl = 0; sl < total; ++sl)
      if (mask & (1 << sl)) S.insert_slot(sl);
    double lw = log_pi[static_cast<std::size_t>(S.s())] - log_choose(total, S.s());
    if (S.s() == 0) {
      lw += log_likelihood(Matrix::Zero(g.p(), d), sigma0, X, Y);
    } else {
      const Gls fit = gls(S, X, Y, g, sigma0);
      const auto m = fit.beta.size();
      Matrix bhat_full = Matrix::Zero(g.p(), d);
      const auto idx = vec_indices(S, g);
      for (Eigen::Index a = 0; a < m; ++a) {
        const int v = idx[static_cast<std::size_t>(a)];
        bhat_full(v % g.p(), v / g.p()) = fit.beta(a);
      }
      const double lhat = log_likelihood(bhat_full, sigma0, X, Y);
      const Matrix cov = inverse_lu(fit.gamma);
      const Matrix L = Eigen::LLT<Matrix>(cov).matrixL();
      // slab log-density of a stacked active vector
      auto log_slab = [&](const Vector& b) {
        double out = 0.0;
        int pos = 0;
        for (int sl : S.slots()) {
          const int k = sl / G, j = sl % G, sz = g.size(j);
          out += sz * (std::log(lambda(k)) - log_slab_const(sz)) - lambda(k) * b.segment(pos, sz).norm();
          pos += sz;
        }
        return out;
      };
      std::vector<double> vals(static_cast<std::size_t>(draws));
      double vmax = -1e300;
      for (int t = 0; t < draws; ++t) {
        Vector e(m);
        for (Eigen::Index a = 0; a < m; ++a) e(a) = z(rng);
        vals[static_cast<std::size_t>(t)] = log_slab(fit.beta + L * e);
        vmax = std::max(vmax, vals[static_cast<std::size_t>(t)]);
      }
      double acc = 0.0;
      for (double v : vals) acc += std::exp(v - vmax);
      const double log_e = vmax + std::log(acc / draws);
      lw += lhat + 0.5 * m * std::log(2.0 * std::numbers::pi) - 0.5 * log_det_lu(fit.gamma) + log_e;
    }
    logw[S] = lw;
    top = std::max(top, lw);
  }
  double z_sum = 0.0;
  for (auto& [S, v] : logw) z_sum += std::exp(v - top);
  for (auto& [S, v] : logw) v = std::exp(v - top) / z_sum;
  return logw;
}

/// phi^2_l2(s) by random search over general (column, group) supports of
/// size s, with the restricted minimum singular value from an SVD of the
/// stacked per-column submatrices.
inline double restricted_eigenvalue_search(const Matrix& X, const GroupStructure& g, int d, int s, int tries,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double xnorm = 0.0;
  for (int j = 0; j < g.G(); ++j)
    xnorm = std::max(xnorm, Eigen::JacobiSVD<Matrix>(X.middleCols(g.offset(j), g.size(j))).singularValues()(0));
  const int total = g.G() * d;
  const int m = std::min(s, total);
  std::vector<int> slots(static_cast<std::size_t>(total));
  double best = 1e300;
  for (int t = 0; t < tries; ++t) {
    for (int i = 0; i < total; ++i) slots[static_cast<std::size_t>(i)] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    // ||X beta||_F^2 splits over columns: the minimum is the smallest over
    // columns of sigma_min^2 of that column's selected groups
    double val = 1e300;
    for (int k = 0; k < d; ++k) {
      std::vector<int> cols;
      for (int i = 0; i < m; ++i) {
        const int sl = slots[static_cast<std::size_t>(i)];
        if (sl / g.G() != k) continue;
        const int j = sl % g.G();
        for (int c = 0; c < g.size(j); ++c) cols.push_back(g.offset(j) + c);
      }
      if (cols.empty()) continue;
      Matrix sub(X.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = X.col(cols[c]);
      const Vector sv = Eigen::JacobiSVD<Matrix>(sub).singularValues();
      const double smin = sub.cols() > sub.rows() ? 0.0 : sv(sv.size() - 1);
      val = std::min(val, smin * smin);
    }
    best = std::min(best, val / (xnorm * xnorm));
  }
  return best;
}

}  // namespace oracle
