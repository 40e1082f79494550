#pragma once

// Gaussian-mixture approximation of the coefficient posterior at a known
// covariance: one component per enumerated support, centred at the
// restricted GLS estimate with covariance (n I_S)^-1.

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvss/core.hpp"
#include "mvss/likelihood.hpp"
#include "mvss/priors.hpp"

namespace mvss {

class EnumerationLimitExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularInformation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr long kDefaultSupportLimit = 1'000'000;

/// Number of supports with at most `cap` active slots out of G d.
inline double support_count(int groups, int columns, int cap) {
  const int total = groups * columns;
  double count = 0.0;
  for (int s = 0; s <= std::min(cap, total); ++s) count += std::exp(detail::log_binomial(total, s));
  return std::round(count);
}

/// Every support of size <= cap, ordered by size then lexicographically.
inline std::vector<SupportIndex> enumerate_supports(int groups, int columns, int cap,
                                                    long limit = kDefaultSupportLimit) {
  detail::require(cap >= 0, "enumerate_supports: cap must be nonnegative");
  const int total = groups * columns;
  cap = std::min(cap, total);
  if (support_count(groups, columns, cap) > static_cast<double>(limit))
    throw EnumerationLimitExceeded("enumerate_supports: more than " + std::to_string(limit) + " supports");
  std::vector<SupportIndex> out;
  for (int s = 0; s <= cap; ++s) {
    std::vector<int> pick(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) pick[static_cast<std::size_t>(i)] = i;
    while (true) {
      SupportIndex S(groups, columns);
      for (int sl : pick) S.insert_slot(sl);
      out.push_back(std::move(S));
      int i = s - 1;
      while (i >= 0 && pick[static_cast<std::size_t>(i)] == total - s + i) --i;
      if (i < 0) break;
      ++pick[static_cast<std::size_t>(i)];
      for (int t = i + 1; t < s; ++t) pick[static_cast<std::size_t>(t)] = pick[static_cast<std::size_t>(t - 1)] + 1;
    }
  }
  return out;
}

struct RestrictedFit {
  Vector beta_hat;  // stacked active coefficients, slot order
  Matrix info;      // I_S = Gamma_S / n
  Matrix gamma;     // Gamma_S = sum_i X~_iS Sigma0^-1 X~_iS'
};

/// GLS estimate of the active coefficients at Sigma0 and its information.
inline RestrictedFit restricted_mle(const SupportIndex& S, const Dataset& data, const GroupStructure& g,
                                    const Matrix& sigma0) {
  detail::require(data.p() == g.p(), "restricted_mle: X column count differs from p");
  detail::require(sigma0.rows() == data.d() && S.d() == data.d() && S.G() == g.G(),
                  "restricted_mle: shape mismatch");
  const int pS = S.p_S(g);
  if (pS > data.n()) throw SingularInformation("restricted_mle: p_S exceeds n");
  RestrictedFit fit;
  if (pS == 0) {
    fit.beta_hat = Vector(0);
    fit.info = Matrix(0, 0);
    fit.gamma = Matrix(0, 0);
    return fit;
  }
  const SpdFactor f0(sigma0, "restricted_mle");
  const Matrix omega = f0.inverse();
  const Matrix YO = data.Y * omega;  // n x d

  std::vector<int> offs;
  int pos = 0;
  for (int sl : S.slots()) {
    offs.push_back(pos);
    pos += g.size(sl % g.G());
  }
  fit.gamma = Matrix::Zero(pS, pS);
  Vector rhs(pS);
  const auto& slots = S.slots();
  for (std::size_t a = 0; a < slots.size(); ++a) {
    const int ka = slots[a] / g.G(), ja = slots[a] % g.G();
    const auto Xa = data.X.middleCols(g.offset(ja), g.size(ja));
    rhs.segment(offs[a], g.size(ja)) = Xa.transpose() * YO.col(ka);
    for (std::size_t b = a; b < slots.size(); ++b) {
      const int kb = slots[b] / g.G(), jb = slots[b] % g.G();
      const auto Xb = data.X.middleCols(g.offset(jb), g.size(jb));
      const Matrix blk = omega(ka, kb) * (Xa.transpose() * Xb);
      fit.gamma.block(offs[a], offs[b], g.size(ja), g.size(jb)) = blk;
      fit.gamma.block(offs[b], offs[a], g.size(jb), g.size(ja)) = blk.transpose();
    }
  }
  Eigen::LLT<Matrix> llt(fit.gamma);
  if (llt.info() != Eigen::Success || (llt.matrixLLT().diagonal().array() <= 1e-12).any())
    throw SingularInformation("restricted_mle: information matrix is singular");
  fit.beta_hat = llt.solve(rhs);
  fit.info = fit.gamma / static_cast<double>(data.n());
  return fit;
}

struct MixtureComponent {
  SupportIndex support;
  double log_weight = 0.0;  // normalized
  Vector mean;              // beta_hat
  Matrix info;              // I_S
  Matrix cov_factor;        // U with U'U = n I_S
};

struct MixturePosterior {
  GroupStructure groups;
  int d = 0;
  int n = 0;
  int cap = 0;
  std::vector<MixtureComponent> components;

  double weight(std::size_t i) const { return std::exp(components[i].log_weight); }

  double log_weight_sum() const {
    std::vector<double> lw;
    lw.reserve(components.size());
    for (const auto& c : components) lw.push_back(c.log_weight);
    return detail::log_sum_exp(lw);
  }

  std::size_t top() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < components.size(); ++i)
      if (components[i].log_weight > components[best].log_weight) best = i;
    return best;
  }

  /// Index of S among the components, or -1.
  long find(const SupportIndex& S) const {
    for (std::size_t i = 0; i < components.size(); ++i)
      if (components[i].support == S) return static_cast<long>(i);
    return -1;
  }

  Matrix component_matrix(std::size_t i, const Vector& active) const {
    Matrix v = Matrix::Zero(groups.p(), d);
    int pos = 0;
    for (int sl : components[i].support.slots()) {
      const int k = sl / groups.G(), j = sl % groups.G();
      v.col(k).segment(groups.offset(j), groups.size(j)) = active.segment(pos, groups.size(j));
      pos += groups.size(j);
    }
    return v;
  }
};

/// Log-weights of every given support, normalized by log-sum-exp.
inline MixturePosterior mixture_weights(const std::vector<SupportIndex>& supports, const Dataset& data,
                                        const GroupStructure& g, const Matrix& sigma0, const HyperParams& hp,
                                        int cap = -1) {
  detail::require(!supports.empty(), "mixture_weights: no supports given");
  hp.validate(data.d());
  const DimensionPrior prior(g.G(), data.d(), data.n(), g.p_max(), hp.dim_exponent);
  MixturePosterior mp;
  mp.groups = g;
  mp.d = data.d();
  mp.n = data.n();
  mp.cap = cap;
  int largest = 0;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (const auto& S : supports) {
    const RestrictedFit fit = restricted_mle(S, data, g, sigma0);
    double lw = log_support_prior(S, prior);
    for (int sl : S.slots()) {
      const int k = sl / g.G(), j = sl % g.G();
      const int m = g.size(j);
      lw += m * (std::log(hp.lambda(k)) + half_log_2pi - log_slab_norm_const(m));
    }
    MixtureComponent c;
    c.support = S;
    c.mean = fit.beta_hat;
    c.info = fit.info;
    if (fit.beta_hat.size() > 0) {
      const SpdFactor fg(fit.gamma, "mixture_weights");
      lw += -0.5 * fg.log_det() + 0.5 * fit.beta_hat.dot(fit.gamma * fit.beta_hat);
      c.cov_factor = Eigen::LLT<Matrix>(fit.gamma).matrixU();
    } else {
      c.cov_factor = Matrix(0, 0);
    }
    c.log_weight = lw;
    largest = std::max(largest, S.s());
    mp.components.push_back(std::move(c));
  }
  if (mp.cap < 0) mp.cap = largest;
  const double lz = mp.log_weight_sum();
  for (auto& c : mp.components) c.log_weight -= lz;
  return mp;
}

/// Mixture over every support with at most `cap` active slots.
inline MixturePosterior mixture_posterior(const Dataset& data, const GroupStructure& g, const Matrix& sigma0,
                                          const HyperParams& hp, int cap, long limit = kDefaultSupportLimit) {
  return mixture_weights(enumerate_supports(g.G(), data.d(), cap, limit), data, g, sigma0, hp, cap);
}

struct MixtureDraw {
  std::size_t component;
  CoefficientMatrix beta;
};

template <class Rng>
std::vector<MixtureDraw> sample_mixture(const MixturePosterior& mp, Rng& rng, std::size_t count) {
  std::vector<double> w;
  w.reserve(mp.components.size());
  for (std::size_t i = 0; i < mp.components.size(); ++i) w.push_back(mp.weight(i));
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> z;
  std::vector<MixtureDraw> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t i = pick(rng);
    const auto& c = mp.components[i];
    Vector e(c.mean.size());
    for (Eigen::Index r = 0; r < e.size(); ++r) e(r) = z(rng);
    Vector active = c.mean;
    if (e.size() > 0) active += c.cov_factor.triangularView<Eigen::Upper>().solve(e);
    out.push_back({i, CoefficientMatrix::from_values(mp.groups, mp.component_matrix(i, active))});
  }
  return out;
}

struct ChainComparison {
  double support_tv = 0.0;         // over the union of both alphabets
  double unenumerated_mass = 0.0;  // chain mass on supports outside the mixture
  std::size_t top_component = 0;
  double top_weight = 0.0;
  double top_chain_frequency = 0.0;
  // per active coordinate of the top support, chain draws restricted to it
  std::vector<double> mean_discrepancy;  // chain mean - mixture mean
  std::vector<double> sd_discrepancy;    // chain sd - mixture sd
};

/// Support-marginal total variation and moment checks on the top support.
inline ChainComparison compare_to_chain(const MixturePosterior& mp, const std::vector<SupportIndex>& supports,
                                        const std::vector<Matrix>& betas) {
  detail::require(betas.empty() || betas.size() == supports.size(),
                  "compare_to_chain: supports and coefficient draws differ in count");
  detail::require(!supports.empty(), "compare_to_chain: no chain samples");
  std::map<SupportIndex, double> freq;
  for (const auto& S : supports) {
    detail::require(S.G() == mp.groups.G() && S.d() == mp.d, "compare_to_chain: chain shape differs from mixture");
    freq[S] += 1.0 / static_cast<double>(supports.size());
  }
  ChainComparison out;
  double tv = 0.0;
  for (std::size_t i = 0; i < mp.components.size(); ++i) {
    auto it = freq.find(mp.components[i].support);
    const double f = it == freq.end() ? 0.0 : it->second;
    tv += std::abs(f - mp.weight(i));
  }
  for (const auto& [S, f] : freq)
    if (mp.find(S) < 0) {
      tv += f;
      out.unenumerated_mass += f;
    }
  out.support_tv = 0.5 * tv;

  out.top_component = mp.top();
  const auto& top = mp.components[out.top_component];
  out.top_weight = mp.weight(out.top_component);
  auto it = freq.find(top.support);
  out.top_chain_frequency = it == freq.end() ? 0.0 : it->second;
  if (betas.empty() || top.mean.size() == 0) return out;

  const Matrix cov = SpdFactor(top.info * static_cast<double>(mp.n), "compare_to_chain").inverse();
  std::vector<Vector> draws;
  for (std::size_t t = 0; t < supports.size(); ++t) {
    if (!(supports[t] == top.support)) continue;
    draws.push_back(CoefficientMatrix::with_support(mp.groups, betas[t], supports[t]).active(mp.groups));
  }
  if (draws.size() < 2) return out;
  const auto m = top.mean.size();
  for (Eigen::Index r = 0; r < m; ++r) {
    double s1 = 0.0, s2 = 0.0;
    for (const auto& v : draws) {
      s1 += v(r);
      s2 += v(r) * v(r);
    }
    const double nd = static_cast<double>(draws.size());
    const double mean = s1 / nd;
    const double sd = std::sqrt(std::max(0.0, (s2 - nd * mean * mean) / (nd - 1.0)));
    out.mean_discrepancy.push_back(mean - top.mean(r));
    out.sd_discrepancy.push_back(sd - std::sqrt(cov(r, r)));
  }
  return out;
}

namespace detail {

inline nlohmann::json row_major(const Matrix& A) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(A.size()));
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < A.cols(); ++c) v.push_back(A(r, c));
  return v;
}

inline Matrix from_row_major(const nlohmann::json& j, int rows, int cols) {
  const auto v = j.get<std::vector<double>>();
  require(static_cast<int>(v.size()) == rows * cols, "from_row_major: wrong element count");
  Matrix A(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) A(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return A;
}

}  // namespace detail

inline nlohmann::json to_json(const MixturePosterior& mp) {
  nlohmann::json j;
  j["groups"] = mp.groups.sizes();
  j["d"] = mp.d;
  j["n"] = mp.n;
  j["cap"] = mp.cap;
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t i = 0; i < mp.components.size(); ++i) {
    const auto& c = mp.components[i];
    nlohmann::json support = nlohmann::json::array();
    for (int sl : c.support.slots()) support.push_back({sl / mp.groups.G(), sl % mp.groups.G()});
    comps.push_back({{"support", support},
                     {"log_weight", c.log_weight},
                     {"weight", mp.weight(i)},
                     {"mean", std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size())},
                     {"information", detail::row_major(c.info)}});
  }
  j["components"] = comps;
  return j;
}

inline MixturePosterior mixture_from_json(const nlohmann::json& j) {
  MixturePosterior mp;
  mp.groups = GroupStructure(j.at("groups").get<std::vector<int>>());
  mp.d = j.at("d").get<int>();
  mp.n = j.at("n").get<int>();
  mp.cap = j.at("cap").get<int>();
  for (const auto& jc : j.at("components")) {
    MixtureComponent c;
    c.support = SupportIndex(mp.groups.G(), mp.d);
    for (const auto& pr : jc.at("support")) c.support.insert(pr.at(0).get<int>(), pr.at(1).get<int>());
    const auto mean = jc.at("mean").get<std::vector<double>>();
    c.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const int m = static_cast<int>(mean.size());
    c.info = detail::from_row_major(jc.at("information"), m, m);
    c.cov_factor = m > 0 ? Matrix(Eigen::LLT<Matrix>(c.info * static_cast<double>(mp.n)).matrixU()) : Matrix(0, 0);
    c.log_weight = jc.at("log_weight").get<double>();
    mp.components.push_back(std::move(c));
  }
  return mp;
}

}  // namespace mvss
