#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>
#include <nlohmann/json.hpp>

#include "mvss/core.hpp"
#include "mvss/likelihood.hpp"
#include "mvss/priors.hpp"
#include "mvss/stats.hpp"

namespace mvss {

enum class CovarianceMode { eigen, inverse_wishart, fixed };

inline std::string to_string(CovarianceMode m) {
  switch (m) {
    case CovarianceMode::eigen: return "eigen";
    case CovarianceMode::inverse_wishart: return "inverse-wishart";
    case CovarianceMode::fixed: return "fixed";
  }
  return "eigen";
}

inline CovarianceMode covariance_mode_from_string(const std::string& s) {
  if (s == "eigen") return CovarianceMode::eigen;
  if (s == "inverse-wishart") return CovarianceMode::inverse_wishart;
  if (s == "fixed") return CovarianceMode::fixed;
  throw std::invalid_argument("unknown covariance mode: " + s);
}

/// Proposal scales and move probabilities. Only the scales are adapted.
struct Tuning {
  double sigma_beta = 0.1;
  double sigma_log_d = 0.2;
  double eps_p = 0.1;
  // support move split: birth / death / swap
  double p_birth = 1.0 / 3.0;
  double p_death = 1.0 / 3.0;
  double p_swap = 1.0 / 3.0;
  // weight of the slab in the birth proposal mixture; the rest is the
  // conditional Gaussian of the block given everything else
  double birth_slab_weight = 0.5;
};

struct SamplerConfig {
  long iterations = 10000;  // kept phase, after burn-in
  long burn_in = 1000;
  long thin = 1;
  Tuning tuning;
  double p_support = 0.4;
  double p_beta = 0.4;
  double p_covariance = 0.2;
  CovarianceMode covariance_mode = CovarianceMode::eigen;
  bool adapt = true;  // Robbins-Monro on the scales during burn-in only
  double target_accept = 0.3;
  std::uint64_t seed = 1;
  std::optional<Matrix> initial_sigma;  // also the fixed value in fixed mode
  // start from a greedy forward fit instead of the empty support; only the
  // starting point changes, burn-in still applies
  bool greedy_start = true;

  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    detail::require(iterations >= 0 && burn_in >= 0 && thin >= 1, "SamplerConfig: bad iteration counts");
    detail::require(positive(tuning.sigma_beta) && positive(tuning.sigma_log_d) && positive(tuning.eps_p),
                    "SamplerConfig: proposal scales must be positive");
    const double mix = p_support + p_beta + p_covariance;
    const double split = tuning.p_birth + tuning.p_death + tuning.p_swap;
    detail::require(p_support >= 0 && p_beta >= 0 && p_covariance >= 0 && std::abs(mix - 1.0) < 1e-9,
                    "SamplerConfig: move probabilities must sum to 1");
    detail::require(tuning.p_birth > 0 && tuning.p_death > 0 && tuning.p_swap >= 0 &&
                        std::abs(split - 1.0) < 1e-9,
                    "SamplerConfig: birth/death/swap probabilities must sum to 1");
    detail::require(tuning.birth_slab_weight >= 0.0 && tuning.birth_slab_weight <= 1.0,
                    "SamplerConfig: birth slab weight must lie in [0, 1]");
    detail::require(target_accept > 0.0 && target_accept < 1.0, "SamplerConfig: target acceptance in (0, 1)");
  }
};

/// Data, groups and hyperparameters bound together with the derived prior
/// objects the moves need.
class Posterior {
 public:
  Posterior(Dataset data, GroupStructure groups, HyperParams hp)
      : data_(std::move(data)),
        groups_(std::move(groups)),
        hp_(std::move(hp)),
        prior_(groups_.G(), data_.d(), data_.n(), groups_.p_max(), hp_.dim_exponent),
        slab_(groups_.p_max()) {
    detail::require(data_.p() == groups_.p(), "Posterior: X column count differs from group total");
    hp_.validate(data_.d());
    XtX_ = data_.X.transpose() * data_.X;
  }

  const Dataset& data() const { return data_; }
  const GroupStructure& groups() const { return groups_; }
  const HyperParams& hp() const { return hp_; }
  const DimensionPrior& dimension_prior() const { return prior_; }
  const Matrix& XtX() const { return XtX_; }
  int n() const { return data_.n(); }
  int d() const { return data_.d(); }
  int G() const { return groups_.G(); }

  double log_slab_block(int k, int j, const Eigen::Ref<const Vector>& b) const {
    const double lambda = hp_.lambda(k);
    return groups_.size(j) * (std::log(lambda) - slab_.log_a(groups_.size(j))) - lambda * b.norm();
  }

  double log_prior_beta(const CoefficientMatrix& beta) const {
    double out = log_support_prior(beta.support(), prior_);
    for (int sl : beta.support().slots()) {
      const int k = sl / G(), j = sl % G();
      out += log_slab_block(k, j, beta.block(groups_, k, j));
    }
    return out;
  }

  /// Haar factor is a constant and omitted in eigen mode.
  double log_prior_sigma(const CovarianceEigen& sigma, CovarianceMode mode) const {
    switch (mode) {
      case CovarianceMode::eigen: {
        double out = 0.0;
        for (int i = 0; i < sigma.d(); ++i) out += log_inverse_gaussian(sigma.D()(i), hp_.ig_mean, hp_.ig_shape);
        return out;
      }
      case CovarianceMode::inverse_wishart:
        detail::require(hp_.wishart.has_value(), "Posterior: inverse-Wishart mode needs Wishart hyperparameters");
        return log_inverse_wishart(sigma.reconstruct(), hp_.wishart->dof, hp_.wishart->scale);
      case CovarianceMode::fixed: return 0.0;
    }
    return 0.0;
  }

  Matrix residual(const Matrix& beta) const { return data_.Y - data_.X * beta; }

  /// Log-likelihood from the residual Gram matrix R'R.
  double log_lik(const Matrix& RtR, const Matrix& sigma_inv, double log_det_sigma) const {
    const double n = data_.n(), d = data_.d();
    return -0.5 * n * d * std::log(2.0 * std::numbers::pi) - 0.5 * n * log_det_sigma -
           0.5 * sigma_inv.cwiseProduct(RtR).sum();
  }

 private:
  Dataset data_;
  GroupStructure groups_;
  HyperParams hp_;
  DimensionPrior prior_;
  SlabConstantTable slab_;
  Matrix XtX_;
};

/// Sampled triple with cached residuals and log-density pieces.
struct ChainState {
  CoefficientMatrix beta;
  CovarianceEigen sigma;
  Matrix residual;  // Y - X beta
  Matrix RtR;       // residual' residual
  Matrix sigma_inv;
  double log_det_sigma = 0.0;
  double log_lik = 0.0;
  double log_prior_beta = 0.0;
  double log_prior_sigma = 0.0;
  long iteration = 0;

  const SupportIndex& support() const { return beta.support(); }

  static ChainState initial(const Posterior& post, const CovarianceEigen& sigma, CovarianceMode mode) {
    ChainState st;
    st.beta = CoefficientMatrix(post.groups(), post.d());
    st.set_sigma(post, sigma, mode);
    st.set_residual(post, post.residual(st.beta.values()));
    st.log_prior_beta = post.log_prior_beta(st.beta);
    return st;
  }

  void set_residual(const Posterior& post, Matrix R) {
    residual = std::move(R);
    RtR = residual.transpose() * residual;
    log_lik = post.log_lik(RtR, sigma_inv, log_det_sigma);
  }

  void set_sigma(const Posterior& post, CovarianceEigen s, CovarianceMode mode) {
    sigma = std::move(s);
    sigma_inv = sigma.P() * sigma.D().cwiseInverse().asDiagonal() * sigma.P().transpose();
    log_det_sigma = sigma.D().array().log().sum();
    log_prior_sigma = post.log_prior_sigma(sigma, mode);
    if (RtR.size() > 0) log_lik = post.log_lik(RtR, sigma_inv, log_det_sigma);
  }

  double log_target() const { return log_lik + log_prior_beta + log_prior_sigma; }

  /// Largest absolute discrepancy between cached and recomputed values.
  double cache_error(const Posterior& post, CovarianceMode mode) const {
    const double ll = log_likelihood(beta.values(), sigma.reconstruct(), post.data());
    double err = std::abs(ll - log_lik);
    err = std::max(err, std::abs(post.log_prior_beta(beta) - log_prior_beta));
    err = std::max(err, std::abs(post.log_prior_sigma(sigma, mode) - log_prior_sigma));
    err = std::max(err, (post.residual(beta.values()) - residual).cwiseAbs().maxCoeff());
    return err;
  }
};

enum class Move { birth, death, swap, beta, eigenvalue, rotation, gibbs_sigma };
inline constexpr std::size_t kMoveCount = 7;

inline const char* move_name(Move m) {
  switch (m) {
    case Move::birth: return "birth";
    case Move::death: return "death";
    case Move::swap: return "swap";
    case Move::beta: return "beta";
    case Move::eigenvalue: return "eigenvalue";
    case Move::rotation: return "rotation";
    case Move::gibbs_sigma: return "gibbs_sigma";
  }
  return "?";
}

enum class Outcome { accepted, rejected, infeasible };

struct MoveResult {
  Move move;
  Outcome outcome;
  bool accepted() const { return outcome == Outcome::accepted; }
};

namespace detail {

template <class Rng>
bool metropolis(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) return true;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return std::log(u(rng)) < log_ratio;
}

/// Conditional Gaussian of block (k, j) given a residual with that block
/// removed; the precision is ridged by lambda_k^2 so it exists without data.
struct BlockProposal {
  Vector mean;
  Eigen::LLT<Matrix> precision;
  double half_log_det_precision = 0.0;
};

inline BlockProposal block_proposal(const Posterior& post, const ChainState& st, const Matrix& R_minus,
                                    int k, int j) {
  const auto& g = post.groups();
  const int off = g.offset(j), m = g.size(j);
  const double lambda = post.hp().lambda(k);
  Matrix A = st.sigma_inv(k, k) * post.XtX().block(off, off, m, m);
  A.diagonal().array() += lambda * lambda;
  Vector h = Vector::Zero(m);
  if (post.n() > 0) h = post.data().X.middleCols(off, m).transpose() * (R_minus * st.sigma_inv.col(k));
  BlockProposal bp;
  bp.precision.compute(A);
  bp.mean = bp.precision.solve(h);
  bp.half_log_det_precision = bp.precision.matrixLLT().diagonal().array().log().sum();
  return bp;
}

inline double log_block_proposal(const Posterior& post, const BlockProposal& bp, const Tuning& tune, int k,
                                 int j, const Vector& b) {
  const int m = static_cast<int>(b.size());
  const Vector z = bp.precision.matrixU() * (b - bp.mean);
  const double log_gauss =
      -0.5 * m * std::log(2.0 * std::numbers::pi) + bp.half_log_det_precision - 0.5 * z.squaredNorm();
  const double w = tune.birth_slab_weight;
  if (w <= 0.0) return log_gauss;
  const double log_slab = post.log_slab_block(k, j, b);
  if (w >= 1.0) return log_slab;
  const std::array<double, 2> parts{std::log(w) + log_slab, std::log1p(-w) + log_gauss};
  return log_sum_exp(parts);
}

template <class Rng>
Vector draw_block(const Posterior& post, const BlockProposal& bp, const Tuning& tune, int k, int j, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int m = post.groups().size(j);
  if (u(rng) < tune.birth_slab_weight) return sample_slab_block(m, post.hp().lambda(k), rng);
  std::normal_distribution<double> z;
  Vector e(m);
  for (int i = 0; i < m; ++i) e(i) = z(rng);
  return bp.mean + bp.precision.matrixU().solve(e);
}

inline Matrix with_block(const Posterior& post, const Matrix& R, int k, int j, const Vector& b, double sign) {
  Matrix out = R;
  if (post.n() > 0) {
    const auto& g = post.groups();
    out.col(k).noalias() -= sign * (post.data().X.middleCols(g.offset(j), g.size(j)) * b);
  }
  return out;
}

template <class Rng>
int uniform_index(std::size_t count, Rng& rng) {
  std::uniform_int_distribution<std::size_t> u(0, count - 1);
  return static_cast<int>(u(rng));
}

/// Adds, one at a time, the inactive block whose conditional mean raises the
/// log target most, until no addition helps. Sigma is left as given. With no
/// rows nothing is ever added.
inline void greedy_forward(ChainState& st, const Posterior& post) {
  if (post.n() == 0) return;
  while (st.support().s() < st.support().capacity()) {
    double best = st.log_target();
    int best_slot = -1;
    Vector best_b;
    for (int slot : st.support().inactive_slots()) {
      const int k = slot / post.G(), j = slot % post.G();
      const Vector b = block_proposal(post, st, st.residual, k, j).mean;
      if ((b.array() == 0.0).all()) continue;
      CoefficientMatrix beta = st.beta;
      beta.set_block(post.groups(), k, j, b);
      const Matrix R = with_block(post, st.residual, k, j, b, 1.0);
      const double v = post.log_lik(R.transpose() * R, st.sigma_inv, st.log_det_sigma) + post.log_prior_beta(beta) +
                       st.log_prior_sigma;
      if (v > best) {
        best = v;
        best_slot = slot;
        best_b = b;
      }
    }
    if (best_slot < 0) return;
    const int k = best_slot / post.G(), j = best_slot % post.G();
    st.beta.set_block(post.groups(), k, j, best_b);
    st.set_residual(post, with_block(post, st.residual, k, j, best_b, 1.0));
    st.log_prior_beta = post.log_prior_beta(st.beta);
  }
}

}  // namespace detail

/// Adds a uniformly chosen inactive (column, group) pair.
template <class Rng>
MoveResult propose_birth(ChainState& st, const Posterior& post, const Tuning& tune, Rng& rng) {
  const auto& S = st.support();
  if (S.s() == S.capacity()) return {Move::birth, Outcome::infeasible};
  const auto inactive = S.inactive_slots();
  const int slot = inactive[static_cast<std::size_t>(detail::uniform_index(inactive.size(), rng))];
  const int k = slot / post.G(), j = slot % post.G();

  const auto bp = detail::block_proposal(post, st, st.residual, k, j);
  const Vector b = detail::draw_block(post, bp, tune, k, j, rng);
  if ((b.array() == 0.0).all()) return {Move::birth, Outcome::rejected};

  CoefficientMatrix beta = st.beta;
  beta.set_block(post.groups(), k, j, b);
  Matrix R = detail::with_block(post, st.residual, k, j, b, 1.0);
  const Matrix RtR = R.transpose() * R;
  const double ll = post.log_lik(RtR, st.sigma_inv, st.log_det_sigma);
  const double lpb = post.log_prior_beta(beta);

  const int s = S.s(), cap = S.capacity();
  const double log_fwd = std::log(tune.p_birth) - std::log(cap - s) + detail::log_block_proposal(post, bp, tune, k, j, b);
  const double log_rev = std::log(tune.p_death) - std::log(s + 1.0);
  const double log_ratio = (ll + lpb) - (st.log_lik + st.log_prior_beta) + log_rev - log_fwd;
  if (!detail::metropolis(log_ratio, rng)) return {Move::birth, Outcome::rejected};
  st.beta = std::move(beta);
  st.residual = std::move(R);
  st.RtR = RtR;
  st.log_lik = ll;
  st.log_prior_beta = lpb;
  return {Move::birth, Outcome::accepted};
}

/// Removes a uniformly chosen active pair; rejected outright at s = 0.
template <class Rng>
MoveResult propose_death(ChainState& st, const Posterior& post, const Tuning& tune, Rng& rng) {
  const auto& S = st.support();
  if (S.empty()) return {Move::death, Outcome::infeasible};
  const int slot = S.slots()[static_cast<std::size_t>(detail::uniform_index(S.slots().size(), rng))];
  const int k = slot / post.G(), j = slot % post.G();
  const Vector b = st.beta.block(post.groups(), k, j);

  CoefficientMatrix beta = st.beta;
  beta.clear_block(post.groups(), k, j);
  Matrix R = detail::with_block(post, st.residual, k, j, b, -1.0);
  const Matrix RtR = R.transpose() * R;
  const double ll = post.log_lik(RtR, st.sigma_inv, st.log_det_sigma);
  const double lpb = post.log_prior_beta(beta);

  const int s = S.s(), cap = S.capacity();
  const auto bp = detail::block_proposal(post, st, R, k, j);
  const double log_fwd = std::log(tune.p_death) - std::log(static_cast<double>(s));
  const double log_rev = std::log(tune.p_birth) - std::log(cap - s + 1.0) +
                         detail::log_block_proposal(post, bp, tune, k, j, b);
  const double log_ratio = (ll + lpb) - (st.log_lik + st.log_prior_beta) + log_rev - log_fwd;
  if (!detail::metropolis(log_ratio, rng)) return {Move::death, Outcome::rejected};
  st.beta = std::move(beta);
  st.residual = std::move(R);
  st.RtR = RtR;
  st.log_lik = ll;
  st.log_prior_beta = lpb;
  return {Move::death, Outcome::accepted};
}

/// Death of one active pair composed with birth of one inactive pair.
template <class Rng>
MoveResult propose_swap(ChainState& st, const Posterior& post, const Tuning& tune, Rng& rng) {
  const auto& S = st.support();
  if (S.empty() || S.s() == S.capacity()) return {Move::swap, Outcome::infeasible};
  const auto& g = post.groups();
  const int old_slot = S.slots()[static_cast<std::size_t>(detail::uniform_index(S.slots().size(), rng))];
  const auto inactive = S.inactive_slots();
  const int new_slot = inactive[static_cast<std::size_t>(detail::uniform_index(inactive.size(), rng))];
  const int ko = old_slot / post.G(), jo = old_slot % post.G();
  const int kn = new_slot / post.G(), jn = new_slot % post.G();
  const Vector b_old = st.beta.block(g, ko, jo);

  const Matrix R_mid = detail::with_block(post, st.residual, ko, jo, b_old, -1.0);
  const auto bp_new = detail::block_proposal(post, st, R_mid, kn, jn);
  const auto bp_old = detail::block_proposal(post, st, R_mid, ko, jo);
  const Vector b_new = detail::draw_block(post, bp_new, tune, kn, jn, rng);
  if ((b_new.array() == 0.0).all()) return {Move::swap, Outcome::rejected};

  CoefficientMatrix beta = st.beta;
  beta.clear_block(g, ko, jo);
  beta.set_block(g, kn, jn, b_new);
  Matrix R = detail::with_block(post, R_mid, kn, jn, b_new, 1.0);
  const Matrix RtR = R.transpose() * R;
  const double ll = post.log_lik(RtR, st.sigma_inv, st.log_det_sigma);
  const double lpb = post.log_prior_beta(beta);

  const double log_fwd = detail::log_block_proposal(post, bp_new, tune, kn, jn, b_new);
  const double log_rev = detail::log_block_proposal(post, bp_old, tune, ko, jo, b_old);
  const double log_ratio = (ll + lpb) - (st.log_lik + st.log_prior_beta) + log_rev - log_fwd;
  if (!detail::metropolis(log_ratio, rng)) return {Move::swap, Outcome::rejected};
  st.beta = std::move(beta);
  st.residual = std::move(R);
  st.RtR = RtR;
  st.log_lik = ll;
  st.log_prior_beta = lpb;
  return {Move::swap, Outcome::accepted};
}

template <class Rng>
MoveResult step_support(ChainState& st, const Posterior& post, const Tuning& tune, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  if (r < tune.p_birth) return propose_birth(st, post, tune, rng);
  if (r < tune.p_birth + tune.p_death) return propose_death(st, post, tune, rng);
  return propose_swap(st, post, tune, rng);
}

/// Joint Gaussian random walk on every active coefficient.
template <class Rng>
MoveResult step_beta(ChainState& st, const Posterior& post, const Tuning& tune, Rng& rng) {
  if (st.support().empty()) return {Move::beta, Outcome::infeasible};
  const auto& g = post.groups();
  std::normal_distribution<double> z;
  Vector active = st.beta.active(g);
  for (Eigen::Index i = 0; i < active.size(); ++i) active(i) += tune.sigma_beta * z(rng);

  CoefficientMatrix beta = st.beta;
  try {
    beta.set_active(g, active);
  } catch (const DimensionError&) {
    return {Move::beta, Outcome::rejected};  // a block landed exactly on zero
  }
  Matrix R = post.residual(beta.values());
  const Matrix RtR = R.transpose() * R;
  const double ll = post.log_lik(RtR, st.sigma_inv, st.log_det_sigma);
  const double lpb = post.log_prior_beta(beta);
  const double log_ratio = (ll + lpb) - (st.log_lik + st.log_prior_beta);
  if (!detail::metropolis(log_ratio, rng)) return {Move::beta, Outcome::rejected};
  st.beta = std::move(beta);
  st.residual = std::move(R);
  st.RtR = RtR;
  st.log_lik = ll;
  st.log_prior_beta = lpb;
  return {Move::beta, Outcome::accepted};
}

namespace detail {

/// Nearest orthogonal matrix with a positive Householder diagonal convention.
inline Matrix reorthonormalize(const Matrix& P) {
  Eigen::HouseholderQR<Matrix> qr(P);
  Matrix Q = qr.householderQ();
  const Matrix& R = qr.matrixQR();
  for (int i = 0; i < Q.cols(); ++i)
    if (R(i, i) < 0.0) Q.col(i) = -Q.col(i);
  return Q;
}

inline CovarianceEigen sorted_descending(const Matrix& P, const Vector& D) {
  const int d = static_cast<int>(D.size());
  std::vector<int> idx(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return D(a) > D(b); });
  Matrix P2(d, d);
  Vector D2(d);
  for (int i = 0; i < d; ++i) {
    P2.col(i) = P.col(idx[static_cast<std::size_t>(i)]);
    D2(i) = D(idx[static_cast<std::size_t>(i)]);
  }
  return CovarianceEigen(std::move(P2), std::move(D2));
}

}  // namespace detail

/// d log-scale eigenvalue updates at uniformly chosen indices, then one
/// local rotation P <- P exp(K) with K skew-symmetric Gaussian.
template <class Rng>
std::vector<MoveResult> step_covariance_eigen(ChainState& st, const Posterior& post, const Tuning& tune,
                                              Rng& rng) {
  std::vector<MoveResult> out;
  const int d = post.d();
  std::normal_distribution<double> z;
  for (int rep = 0; rep < d; ++rep) {
    const int i = detail::uniform_index(static_cast<std::size_t>(d), rng);
    Vector D = st.sigma.D();
    const double old_val = D(i);
    const double new_val = old_val * std::exp(tune.sigma_log_d * z(rng));
    D(i) = new_val;
    if (!(new_val > 0.0) || !std::isfinite(new_val)) {
      out.push_back({Move::eigenvalue, Outcome::rejected});
      continue;
    }
    const Matrix sigma_inv = st.sigma.P() * D.cwiseInverse().asDiagonal() * st.sigma.P().transpose();
    const double log_det = D.array().log().sum();
    const double ll = post.log_lik(st.RtR, sigma_inv, log_det);
    const double lp_new = log_inverse_gaussian(new_val, post.hp().ig_mean, post.hp().ig_shape);
    const double lp_old = log_inverse_gaussian(old_val, post.hp().ig_mean, post.hp().ig_shape);
    const double log_ratio = ll - st.log_lik + lp_new - lp_old + std::log(new_val) - std::log(old_val);
    if (detail::metropolis(log_ratio, rng)) {
      st.set_sigma(post, detail::sorted_descending(st.sigma.P(), D), CovarianceMode::eigen);
      out.push_back({Move::eigenvalue, Outcome::accepted});
    } else {
      out.push_back({Move::eigenvalue, Outcome::rejected});
    }
  }
  if (d < 2) return out;

  Matrix K = Matrix::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b) {
      K(a, b) = tune.eps_p * z(rng);
      K(b, a) = -K(a, b);
    }
  const Matrix P = detail::reorthonormalize(st.sigma.P() * K.exp());
  CovarianceEigen proposal(P, st.sigma.D());
  const Matrix sigma_inv = P * st.sigma.D().cwiseInverse().asDiagonal() * P.transpose();
  const double ll = post.log_lik(st.RtR, sigma_inv, st.log_det_sigma);
  if (detail::metropolis(ll - st.log_lik, rng)) {
    st.set_sigma(post, std::move(proposal), CovarianceMode::eigen);
    out.push_back({Move::rotation, Outcome::accepted});
  } else {
    out.push_back({Move::rotation, Outcome::rejected});
  }
  return out;
}

/// Exact Gibbs draw from IW(nu + n, Phi + R'R).
template <class Rng>
MoveResult step_covariance_iw(ChainState& st, const Posterior& post, Rng& rng) {
  detail::require(post.hp().wishart.has_value(), "step_covariance_iw: Wishart hyperparameters missing");
  const WishartPrior posterior =
      iw_conjugate_update_gram(post.hp().wishart->dof, post.hp().wishart->scale, st.RtR, post.n());
  const Matrix sigma = sample_inverse_wishart(posterior.dof, posterior.scale, rng);
  st.set_sigma(post, CovarianceEigen::from_matrix(sigma), CovarianceMode::inverse_wishart);
  return {Move::gibbs_sigma, Outcome::accepted};
}

// ---------------------------------------------------------------------------
// chain driver

struct ChainDiagnostics {
  std::array<long, kMoveCount> proposed{};
  std::array<long, kMoveCount> accepted{};
  std::array<long, kMoveCount> infeasible{};
  std::vector<double> trace_log_lik;
  std::vector<double> trace_s;
  std::vector<double> trace_beta_norm;
  std::map<SupportIndex, long> support_visits;
  Tuning final_tuning;
  long kept = 0;

  /// Accepted over feasible proposals; 0 when none were made.
  double acceptance_rate(Move m) const {
    const auto i = static_cast<std::size_t>(m);
    const long feasible = proposed[i] - infeasible[i];
    return feasible > 0 ? static_cast<double>(accepted[i]) / static_cast<double>(feasible) : 0.0;
  }
  double ess_log_lik() const { return stats::effective_sample_size(trace_log_lik); }
  double ess_s() const { return stats::effective_sample_size(trace_s); }
  double ess_beta_norm() const { return stats::effective_sample_size(trace_beta_norm); }

  /// Most visited support among kept samples.
  SupportIndex modal_support() const {
    SupportIndex best;
    long count = -1;
    for (const auto& [S, c] : support_visits)
      if (c > count) {
        best = S;
        count = c;
      }
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    nlohmann::json acc = nlohmann::json::object();
    for (std::size_t i = 0; i < kMoveCount; ++i) {
      if (proposed[i] == 0) continue;
      acc[move_name(static_cast<Move>(i))] = {{"proposed", proposed[i]},
                                              {"accepted", accepted[i]},
                                              {"infeasible", infeasible[i]},
                                              {"rate", acceptance_rate(static_cast<Move>(i))}};
    }
    j["moves"] = acc;
    j["kept"] = kept;
    j["ess"] = {{"loglik", ess_log_lik()}, {"s", ess_s()}, {"beta_frobenius", ess_beta_norm()}};
    j["tuning"] = {{"sigma_beta", final_tuning.sigma_beta},
                   {"sigma_log_d", final_tuning.sigma_log_d},
                   {"eps_p", final_tuning.eps_p}};
    j["distinct_supports"] = support_visits.size();
    return j;
  }
};

/// One line of the sample stream.
inline nlohmann::json sample_record(const ChainState& st, const GroupStructure& g) {
  nlohmann::json rec;
  rec["iter"] = st.iteration;
  rec["s"] = st.support().s();
  nlohmann::json support = nlohmann::json::array();
  for (int sl : st.support().slots()) support.push_back({sl / g.G(), sl % g.G()});
  rec["support"] = support;
  nlohmann::json beta = nlohmann::json::array();
  const Matrix& v = st.beta.values();
  for (int c = 0; c < v.cols(); ++c)
    for (int r = 0; r < v.rows(); ++r)
      if (v(r, c) != 0.0) beta.push_back({r, c, v(r, c)});
  rec["beta"] = beta;
  rec["D"] = std::vector<double>(st.sigma.D().data(), st.sigma.D().data() + st.sigma.D().size());
  std::vector<double> P;
  for (int r = 0; r < st.sigma.d(); ++r)
    for (int c = 0; c < st.sigma.d(); ++c) P.push_back(st.sigma.P()(r, c));
  rec["P"] = P;
  rec["loglik"] = st.log_lik;
  return rec;
}

struct ParsedSample {
  long iter = 0;
  SupportIndex support;
  Matrix beta;
  CovarianceEigen sigma;
  double log_lik = 0.0;
};

inline ParsedSample parse_sample_record(const nlohmann::json& rec, const GroupStructure& g, int d) {
  ParsedSample out;
  out.iter = rec.at("iter").get<long>();
  out.support = SupportIndex(g.G(), d);
  for (const auto& pair : rec.at("support")) out.support.insert(pair.at(0).get<int>(), pair.at(1).get<int>());
  out.beta = Matrix::Zero(g.p(), d);
  for (const auto& t : rec.at("beta")) out.beta(t.at(0).get<int>(), t.at(1).get<int>()) = t.at(2).get<double>();
  const auto D = rec.at("D").get<std::vector<double>>();
  const auto P = rec.at("P").get<std::vector<double>>();
  detail::require(static_cast<int>(D.size()) == d && static_cast<int>(P.size()) == d * d,
                  "parse_sample_record: covariance arrays have the wrong length");
  Matrix Pm(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) Pm(r, c) = P[static_cast<std::size_t>(r * d + c)];
  out.sigma = CovarianceEigen(detail::reorthonormalize(Pm), Eigen::Map<const Vector>(D.data(), d));
  out.log_lik = rec.at("loglik").get<double>();
  return out;
}

using SampleCallback = std::function<void(const ChainState&)>;

class ChainRunner {
 public:
  ChainRunner(const Posterior& post, SamplerConfig config)
      : post_(post), config_(std::move(config)), rng_(config_.seed) {
    config_.validate();
    if (config_.covariance_mode == CovarianceMode::inverse_wishart)
      detail::require(post.hp().wishart.has_value(), "ChainRunner: inverse-Wishart mode needs Wishart hyperparameters");
    const CovarianceEigen sigma0 = config_.initial_sigma ? CovarianceEigen::from_matrix(*config_.initial_sigma)
                                                         : CovarianceEigen::identity(post.d());
    state_ = ChainState::initial(post, sigma0, config_.covariance_mode);
    if (config_.greedy_start) detail::greedy_forward(state_, post);
    tune_ = config_.tuning;
  }

  const ChainState& state() const { return state_; }
  ChainState& state() { return state_; }
  const Tuning& tuning() const { return tune_; }

  /// One random-scan update.
  void step(ChainDiagnostics& diag, bool adapting) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng_);
    double p_support = config_.p_support, p_beta = config_.p_beta;
    if (config_.covariance_mode == CovarianceMode::fixed) {
      const double scale = p_support + p_beta;
      p_support /= scale;
      p_beta /= scale;
    }
    if (r < p_support) {
      record(diag, step_support(state_, post_, tune_, rng_));
    } else if (r < p_support + p_beta) {
      const auto res = step_beta(state_, post_, tune_, rng_);
      record(diag, res);
      if (adapting && res.outcome != Outcome::infeasible) adapt(tune_.sigma_beta, res.accepted());
    } else {
      switch (config_.covariance_mode) {
        case CovarianceMode::eigen:
          for (const auto& res : step_covariance_eigen(state_, post_, tune_, rng_)) {
            record(diag, res);
            if (!adapting) continue;
            if (res.move == Move::eigenvalue) adapt(tune_.sigma_log_d, res.accepted());
            if (res.move == Move::rotation) adapt(tune_.eps_p, res.accepted(), std::numbers::pi);
          }
          break;
        case CovarianceMode::inverse_wishart: record(diag, step_covariance_iw(state_, post_, rng_)); break;
        case CovarianceMode::fixed: break;
      }
    }
    ++state_.iteration;
    if (adapting) ++adapt_step_;
  }

  ChainDiagnostics run(const SampleCallback& on_sample = {}) {
    ChainDiagnostics diag;
    for (long t = 0; t < config_.burn_in; ++t) step(diag, config_.adapt);
    diag = ChainDiagnostics{};  // report kept-phase rates only
    for (long t = 0; t < config_.iterations; ++t) {
      step(diag, false);
      if ((t + 1) % config_.thin != 0) continue;
      ++diag.kept;
      diag.trace_log_lik.push_back(state_.log_lik);
      diag.trace_s.push_back(state_.support().s());
      diag.trace_beta_norm.push_back(state_.beta.values().norm());
      ++diag.support_visits[state_.support()];
      if (on_sample) on_sample(state_);
    }
    diag.final_tuning = tune_;
    return diag;
  }

 private:
  static void record(ChainDiagnostics& diag, const MoveResult& r) {
    const auto i = static_cast<std::size_t>(r.move);
    ++diag.proposed[i];
    if (r.outcome == Outcome::accepted) ++diag.accepted[i];
    if (r.outcome == Outcome::infeasible) ++diag.infeasible[i];
  }

  void adapt(double& scale, bool accepted, double upper = 1e3) {
    const double gain = 1.0 / std::pow(1.0 + static_cast<double>(adapt_step_) / 10.0, 0.6);
    scale *= std::exp(gain * ((accepted ? 1.0 : 0.0) - config_.target_accept));
    scale = std::clamp(scale, 1e-6, upper);
  }

  const Posterior& post_;
  SamplerConfig config_;
  std::mt19937_64 rng_;
  ChainState state_;
  Tuning tune_;
  long adapt_step_ = 0;
};

/// Runs burn-in plus kept iterations; deterministic given the seed.
inline ChainDiagnostics run_chain(const Posterior& post, const SamplerConfig& config,
                                  const SampleCallback& on_sample = {}) {
  ChainRunner runner(post, config);
  return runner.run(on_sample);
}

}  // namespace mvss
