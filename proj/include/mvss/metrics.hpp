#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvss/core.hpp"

namespace mvss {

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr long kExactSubsetBudget = 1L << 20;
inline constexpr long kCompatibilitySubsetBudget = 1L << 12;

/// A combinatorial minimum; `approximate` marks a search-based upper bound.
struct PhiResult {
  double value = 0.0;  // squared, as in the definitions
  bool approximate = false;
  long subsets = 0;
  std::vector<int> argmin;  // minimizing group set
};

namespace detail {

/// Calls f on every size-m subset of {0..G-1} (lexicographic).
template <class F>
void for_each_subset(int G, int m, F&& f) {
  std::vector<int> pick(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) pick[static_cast<std::size_t>(i)] = i;
  while (true) {
    f(pick);
    int i = m - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == G - m + i) --i;
    if (i < 0) return;
    ++pick[static_cast<std::size_t>(i)];
    for (int t = i + 1; t < m; ++t) pick[static_cast<std::size_t>(t)] = pick[static_cast<std::size_t>(t - 1)] + 1;
  }
}

inline std::vector<int> columns_of(const GroupStructure& g, const std::vector<int>& T) {
  std::vector<int> cols;
  for (int j : T)
    for (int c = 0; c < g.size(j); ++c) cols.push_back(g.offset(j) + c);
  return cols;
}

inline Matrix gram_sub(const Matrix& XtX, const std::vector<int>& cols) {
  const auto m = static_cast<Eigen::Index>(cols.size());
  Matrix A(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) A(a, b) = XtX(cols[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(b)]);
  return A;
}

inline double min_eigenvalue(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  return std::max(0.0, Eigen::SelfAdjointEigenSolver<Matrix>(A, Eigen::EigenvaluesOnly).eigenvalues()(0));
}

/// Random subsets plus greedy single-swap descent on a subset objective.
template <class Obj>
PhiResult search_subsets(int G, int m, long budget, Obj&& objective, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PhiResult best;
  best.value = std::numeric_limits<double>::infinity();
  best.approximate = true;
  std::vector<int> all(static_cast<std::size_t>(G));
  for (int j = 0; j < G; ++j) all[static_cast<std::size_t>(j)] = j;
  const long restarts = std::max(1L, budget / std::max(1, 4 * m * (G - m) + 1));
  for (long r = 0; r < restarts && best.subsets < budget; ++r) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<int> T(all.begin(), all.begin() + m);
    std::sort(T.begin(), T.end());
    double cur = objective(T);
    ++best.subsets;
    bool improved = true;
    while (improved && best.subsets < budget) {
      improved = false;
      for (int a = 0; a < m && !improved; ++a)
        for (int j = 0; j < G && !improved; ++j) {
          if (std::find(T.begin(), T.end(), j) != T.end()) continue;
          std::vector<int> U = T;
          U[static_cast<std::size_t>(a)] = j;
          std::sort(U.begin(), U.end());
          const double v = objective(U);
          ++best.subsets;
          if (v < cur - 1e-15) {
            cur = v;
            T = U;
            improved = true;
          }
        }
    }
    if (cur < best.value) {
      best.value = cur;
      best.argmin = T;
    }
  }
  return best;
}

}  // namespace detail

/// phi^2_l2(s~): inf ||X beta||_F^2 / (||X||_o^2 ||beta||_F^2) over beta with
/// at most s~ active (column, group) pairs. The ratio separates over columns
/// and the smallest eigenvalue shrinks as groups are added, so the minimum
/// sits on a single column with min(s~, G) groups.
inline PhiResult restricted_eigenvalue(const Matrix& X, const GroupStructure& g, int s_tilde,
                                       long budget = kExactSubsetBudget) {
  detail::require(X.cols() == g.p(), "restricted_eigenvalue: X column count differs from p");
  detail::require(s_tilde >= 1, "restricted_eigenvalue: s~ must be at least 1");
  const double norm = group_operator_norm(X, g);
  detail::require(norm > 0.0, "restricted_eigenvalue: ||X||_o is zero");
  const double scale = norm * norm;
  const Matrix XtX = X.transpose() * X;
  const int m = std::min(s_tilde, g.G());
  auto objective = [&](const std::vector<int>& T) {
    return detail::min_eigenvalue(detail::gram_sub(XtX, detail::columns_of(g, T))) / scale;
  };
  const double count = std::round(std::exp(detail::log_binomial(g.G(), m)));
  if (count > static_cast<double>(budget)) return detail::search_subsets(g.G(), m, budget, objective, 0x5eed);
  PhiResult out;
  out.value = std::numeric_limits<double>::infinity();
  detail::for_each_subset(g.G(), m, [&](const std::vector<int>& T) {
    const double v = objective(T);
    ++out.subsets;
    if (v < out.value) {
      out.value = v;
      out.argmin = T;
    }
  });
  return out;
}

namespace detail {

/// Upper bound on min_b b'Ab / (sum_j ||b_j||)^2 for blocks of the given
/// sizes by multi-start normalized gradient descent.
inline double min_l21_ratio(const Matrix& A, const std::vector<int>& sizes, std::mt19937_64& rng,
                            int restarts = 8, int steps = 300) {
  const auto p = A.rows();
  auto l21 = [&](const Vector& b) {
    double s = 0.0;
    Eigen::Index pos = 0;
    for (int m : sizes) {
      s += b.segment(pos, m).norm();
      pos += m;
    }
    return s;
  };
  auto ratio = [&](const Vector& b) {
    const double N = l21(b);
    return N > 0.0 ? b.dot(A * b) / (N * N) : std::numeric_limits<double>::infinity();
  };
  auto grad = [&](const Vector& b) {
    const double N = l21(b);
    const double q = b.dot(A * b);
    Vector dN(p);
    Eigen::Index pos = 0;
    for (int m : sizes) {
      const double nb = b.segment(pos, m).norm();
      dN.segment(pos, m) = nb > 0.0 ? Vector(b.segment(pos, m) / nb) : Vector::Zero(m);
      pos += m;
    }
    return Vector((2.0 * (A * b) * N - 2.0 * q * dN) / (N * N * N));
  };

  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  std::normal_distribution<double> z;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Vector b(p);
    if (r == 0) {
      b = es.eigenvectors().col(0);
    } else {
      for (Eigen::Index i = 0; i < p; ++i) b(i) = z(rng);
    }
    b /= l21(b);
    double f = ratio(b);
    double step = 1.0;
    for (int t = 0; t < steps; ++t) {
      const Vector gr = grad(b);
      const double gn = gr.norm();
      if (!(gn > 1e-14)) break;
      bool moved = false;
      while (step > 1e-12) {
        Vector cand = b - step * gr / gn;
        const double N = l21(cand);
        if (N <= 0.0) {
          step *= 0.5;
          continue;
        }
        cand /= N;
        const double fc = ratio(cand);
        if (fc < f) {
          b = cand;
          f = fc;
          step *= 1.5;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    best = std::min(best, f);
  }
  return best;
}

}  // namespace detail

/// phi^2_{l2,1}(s~). Reduces to a single column with |T| <= s~ groups, where
/// the inner nonconvex minimum is found by multi-start descent; the result is
/// an upper bound on the true infimum and flagged approximate.
inline PhiResult compatibility_number(const Matrix& X, const GroupStructure& g, int s_tilde,
                                      long budget = kCompatibilitySubsetBudget, std::uint64_t seed = 0xc0ffee) {
  detail::require(X.cols() == g.p(), "compatibility_number: X column count differs from p");
  detail::require(s_tilde >= 1, "compatibility_number: s~ must be at least 1");
  const double norm = group_operator_norm(X, g);
  detail::require(norm > 0.0, "compatibility_number: ||X||_o is zero");
  const double scale = norm * norm;
  const Matrix XtX = X.transpose() * X;
  std::mt19937_64 rng(seed);
  auto objective = [&](const std::vector<int>& T) {
    const Matrix A = detail::gram_sub(XtX, detail::columns_of(g, T));
    std::vector<int> sizes;
    for (int j : T) sizes.push_back(g.size(j));
    const double c = T.size() == 1 ? detail::min_eigenvalue(A) : detail::min_l21_ratio(A, sizes, rng);
    return static_cast<double>(T.size()) * c / scale;
  };
  PhiResult out;
  out.value = std::numeric_limits<double>::infinity();
  out.approximate = true;
  for (int m = 1; m <= std::min(s_tilde, g.G()); ++m) {
    const double count = std::round(std::exp(detail::log_binomial(g.G(), m)));
    if (count > static_cast<double>(budget)) {
      const PhiResult r = detail::search_subsets(g.G(), m, budget, objective, seed + static_cast<std::uint64_t>(m));
      out.subsets += r.subsets;
      if (r.value < out.value) {
        out.value = r.value;
        out.argmin = r.argmin;
      }
      continue;
    }
    detail::for_each_subset(g.G(), m, [&](const std::vector<int>& T) {
      const double v = objective(T);
      ++out.subsets;
      if (v < out.value) {
        out.value = v;
        out.argmin = T;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// rate calculators

struct RateConstants {
  double M1 = 1.0, M2 = 1.0, M3 = 1.0, M4 = 1.0;
};

struct RateInputs {
  int n = 0;
  int G = 0;
  int d = 0;
  int p_max = 0;
  int s0 = 0;
  double x_norm = 0.0;       // ||X||_o
  double phi_l2_sq = 0.0;    // phi^2_l2(s0 + M2 s*)
  double lambda_max = 0.0;   // max_k lambda_k
  RateConstants constants;
};

struct RateSummary {
  double eps_n = 0.0;
  double s_star = 0.0;
  double beta_min_threshold = 0.0;  // on min ||beta_jk||^2 over true groups
  double beta_bar = 0.0;            // bound on sum_k ||beta_0k||_{2,1}
  double log_complexity = 0.0;      // log G v p_max log n
  RateInputs inputs;
};

inline double rate_log_complexity(int n, int G, int p_max) {
  return std::max(std::log(static_cast<double>(G)), p_max * std::log(static_cast<double>(n)));
}

inline double contraction_rate(int n, int G, int d, int p_max, int s0) {
  const double nd = n, logn = std::log(nd);
  return std::sqrt(std::max({s0 * std::log(static_cast<double>(G)) / nd, s0 * p_max * logn / nd,
                             static_cast<double>(d) * d * logn / nd}));
}

inline double dimension_threshold(int n, int G, int d, int p_max, int s0) {
  return std::max(static_cast<double>(s0),
                  static_cast<double>(d) * d * std::log(static_cast<double>(n)) / rate_log_complexity(n, G, p_max));
}

/// Size argument s0 + M2 s* rounded up for the restricted eigenvalue.
inline int restricted_size(int n, int G, int d, int p_max, int s0, double M2) {
  return static_cast<int>(std::ceil(s0 + M2 * dimension_threshold(n, G, d, p_max, s0) - 1e-12));
}

inline RateSummary theoretical_rates(const RateInputs& in) {
  detail::require(in.n >= 2 && in.G >= 1 && in.d >= 1 && in.p_max >= 1 && in.s0 >= 0,
                  "theoretical_rates: invalid shape");
  RateSummary r;
  r.inputs = in;
  r.log_complexity = rate_log_complexity(in.n, in.G, in.p_max);
  r.eps_n = contraction_rate(in.n, in.G, in.d, in.p_max, in.s0);
  r.s_star = dimension_threshold(in.n, in.G, in.d, in.p_max, in.s0);
  const double n_eps2 = in.n * r.eps_n * r.eps_n;
  r.beta_min_threshold = in.x_norm > 0.0 && in.phi_l2_sq > 0.0
                             ? in.constants.M3 * n_eps2 / (in.x_norm * in.x_norm * in.phi_l2_sq)
                             : std::numeric_limits<double>::infinity();
  r.beta_bar = in.lambda_max > 0.0 ? in.s0 * r.log_complexity / in.lambda_max
                                   : std::numeric_limits<double>::infinity();
  return r;
}

/// Fills ||X||_o and phi^2 from the design before evaluating the rates.
inline RateSummary theoretical_rates(const Matrix& X, const GroupStructure& g, int d, int s0,
                                     double lambda_max, const RateConstants& c = {},
                                     long budget = kExactSubsetBudget) {
  RateInputs in;
  in.n = static_cast<int>(X.rows());
  in.G = g.G();
  in.d = d;
  in.p_max = g.p_max();
  in.s0 = s0;
  in.x_norm = group_operator_norm(X, g);
  in.lambda_max = lambda_max;
  in.constants = c;
  in.phi_l2_sq = restricted_eigenvalue(X, g, restricted_size(in.n, in.G, d, in.p_max, s0, c.M2), budget).value;
  return theoretical_rates(in);
}

inline nlohmann::json to_json(const RateSummary& r) {
  return {{"eps_n", r.eps_n},
          {"s_star", r.s_star},
          {"beta_min_threshold", r.beta_min_threshold},
          {"beta_bar", r.beta_bar},
          {"log_complexity", r.log_complexity},
          {"inputs",
           {{"n", r.inputs.n},
            {"G", r.inputs.G},
            {"d", r.inputs.d},
            {"p_max", r.inputs.p_max},
            {"s0", r.inputs.s0},
            {"x_norm", r.inputs.x_norm},
            {"phi_l2_sq", r.inputs.phi_l2_sq},
            {"lambda_max", r.inputs.lambda_max},
            {"M", {r.inputs.constants.M1, r.inputs.constants.M2, r.inputs.constants.M3, r.inputs.constants.M4}}}}};
}

// ---------------------------------------------------------------------------
// recovery and selection

struct RecoveryLosses {
  double prediction = 0.0;  // ||X (beta - beta0)||_F^2
  double frobenius = 0.0;   // ||beta - beta0||_F^2
  double l21_sq = 0.0;      // (sum_k ||beta_k - beta0_k||_{2,1})^2
};

inline RecoveryLosses recovery_report(const Matrix& beta, const Matrix& beta0, const Matrix& X,
                                      const GroupStructure& g) {
  detail::require(beta.rows() == beta0.rows() && beta.cols() == beta0.cols() && beta.rows() == X.cols(),
                  "recovery_report: shape mismatch");
  const Matrix diff = beta - beta0;
  RecoveryLosses out;
  out.prediction = (X * diff).squaredNorm();
  out.frobenius = diff.squaredNorm();
  const double l21 = l21_norm_total(diff, g);
  out.l21_sq = l21 * l21;
  return out;
}

struct SelectionReport {
  bool exact = false;
  int missed = 0;        // in S0, not selected
  int false_groups = 0;  // selected, not in S0
};

inline SelectionReport selection_report(const SupportIndex& selected, const SupportIndex& truth) {
  detail::require(selected.G() == truth.G() && selected.d() == truth.d(), "selection_report: shape mismatch");
  SelectionReport r;
  for (int sl : truth.slots())
    if (!selected.contains_slot(sl)) ++r.missed;
  for (int sl : selected.slots())
    if (!truth.contains_slot(sl)) ++r.false_groups;
  r.exact = r.missed == 0 && r.false_groups == 0;
  return r;
}

/// Histogram of s over the given support draws, indexed 0..Gd.
inline std::vector<long> effective_dimension(const std::vector<SupportIndex>& draws, int groups, int columns) {
  std::vector<long> hist(static_cast<std::size_t>(groups * columns + 1), 0);
  for (const auto& S : draws) ++hist.at(static_cast<std::size_t>(S.s()));
  return hist;
}

}  // namespace mvss
