#pragma once

// Small statistical toolkit shared by the prior checks, the sampler
// diagnostics and the experiment harness.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace mvss::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

inline double std_error(std::span<const double> xs) {
  return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

/// Linear-interpolated quantile on a copy of the data, q in [0, 1].
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double gamma_cdf(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(shape, rate * x);
}

inline double inverse_gaussian_cdf(double x, double mu, double shape) {
  if (x <= 0.0) return 0.0;
  const double r = std::sqrt(shape / x);
  const double a = normal_cdf(r * (x / mu - 1.0));
  const double tail = 0.5 * std::erfc(r * (x / mu + 1.0) / std::sqrt(2.0));
  const double b = tail > 0.0 ? std::exp(2.0 * shape / mu + std::log(tail)) : 0.0;
  return std::clamp(a + b, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Asymptotic Kolmogorov critical coefficient c(alpha) = sqrt(-log(alpha / 2) / 2).
inline double ks_coefficient(double alpha) { return std::sqrt(-0.5 * std::log(alpha / 2.0)); }

/// One-sample critical value with Stephens' finite-n correction.
inline double ks_critical(std::size_t n, double alpha) {
  const double rn = std::sqrt(static_cast<double>(n));
  return ks_coefficient(alpha) / (rn + 0.12 + 0.11 / rn);
}

inline double ks_critical_two_sample(std::size_t n, std::size_t m, double alpha) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return ks_coefficient(alpha) * std::sqrt((nn + mm) / (nn * mm));
}

/// Effective sample size from the initial monotone positive sequence of
/// autocorrelation pair sums.
inline double effective_sample_size(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 4) return static_cast<double>(n);
  const double m = mean(xs);
  std::vector<double> c(xs.begin(), xs.end());
  for (double& v : c) v -= m;
  const double c0 = std::inner_product(c.begin(), c.end(), c.begin(), 0.0) / static_cast<double>(n);
  if (c0 <= 0.0) return static_cast<double>(n);
  auto rho = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) acc += c[i] * c[i + lag];
    return acc / static_cast<double>(n) / c0;
  };
  double tau = -1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; 2 * t + 1 < n; ++t) {
    double pair = rho(2 * t) + rho(2 * t + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    tau += 2.0 * pair;
    prev = pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return static_cast<double>(n) / tau;
}

}  // namespace mvss::stats
