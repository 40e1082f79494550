#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mvss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

inline double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace detail

/// Partition of the p design columns into G contiguous, disjoint groups in
/// column order.
class GroupStructure {
 public:
  GroupStructure() = default;

  explicit GroupStructure(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    detail::require(!sizes_.empty(), "GroupStructure: at least one group required");
    offsets_.reserve(sizes_.size() + 1);
    offsets_.push_back(0);
    for (int sz : sizes_) {
      detail::require(sz >= 1, "GroupStructure: group sizes must be positive");
      offsets_.push_back(offsets_.back() + sz);
      p_max_ = std::max(p_max_, sz);
    }
  }

  static GroupStructure uniform(int groups, int size) {
    return GroupStructure(std::vector<int>(static_cast<std::size_t>(groups), size));
  }

  int p() const { return offsets_.empty() ? 0 : offsets_.back(); }
  int G() const { return static_cast<int>(sizes_.size()); }
  int p_max() const { return p_max_; }
  int size(int j) const { return sizes_.at(static_cast<std::size_t>(j)); }
  int offset(int j) const { return offsets_.at(static_cast<std::size_t>(j)); }
  const std::vector<int>& sizes() const { return sizes_; }

  int group_of(int column) const {
    detail::require(column >= 0 && column < p(), "GroupStructure: column out of range");
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), column);
    return static_cast<int>(it - offsets_.begin()) - 1;
  }

  bool operator==(const GroupStructure& other) const { return sizes_ == other.sizes_; }

 private:
  std::vector<int> sizes_;
  std::vector<int> offsets_;
  int p_max_ = 0;
};

/// Paired design and response. Zero rows are allowed so that prior-only
/// chains can be run through the same code path.
struct Dataset {
  Matrix X;  // n x p
  Matrix Y;  // n x d

  Dataset() = default;
  Dataset(Matrix x, Matrix y) : X(std::move(x)), Y(std::move(y)) {
    detail::require(X.rows() == Y.rows(), "Dataset: X and Y row counts differ");
    detail::require(Y.cols() >= 1, "Dataset: Y needs at least one column");
    detail::require(X.allFinite() && Y.allFinite(), "Dataset: non-finite entry");
  }

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }
  int d() const { return static_cast<int>(Y.cols()); }
};

/// Active (response column, group) pairs. Stored as sorted slot indices
/// slot = k * G + j so that ordering and equality are cheap.
class SupportIndex {
 public:
  SupportIndex() = default;
  SupportIndex(int groups, int columns) : G_(groups), d_(columns) {
    detail::require(groups >= 1 && columns >= 1, "SupportIndex: empty shape");
  }

  static SupportIndex from_sets(int groups, const std::vector<std::vector<int>>& sets) {
    SupportIndex s(groups, static_cast<int>(sets.size()));
    for (std::size_t k = 0; k < sets.size(); ++k)
      for (int j : sets[k]) {
        detail::require(!s.contains(static_cast<int>(k), j), "SupportIndex: duplicate group");
        s.insert(static_cast<int>(k), j);
      }
    return s;
  }

  int G() const { return G_; }
  int d() const { return d_; }
  int s() const { return static_cast<int>(slots_.size()); }
  int capacity() const { return G_ * d_; }
  bool empty() const { return slots_.empty(); }

  const std::vector<int>& slots() const { return slots_; }
  static int column_of(int slot, int groups) { return slot / groups; }
  static int group_of(int slot, int groups) { return slot % groups; }
  int slot(int k, int j) const { return k * G_ + j; }

  bool contains(int k, int j) const { return contains_slot(slot(k, j)); }
  bool contains_slot(int sl) const { return std::binary_search(slots_.begin(), slots_.end(), sl); }

  void insert(int k, int j) { insert_slot(slot(k, j)); }
  void insert_slot(int sl) {
    detail::require(sl >= 0 && sl < capacity(), "SupportIndex: slot out of range");
    auto it = std::lower_bound(slots_.begin(), slots_.end(), sl);
    if (it == slots_.end() || *it != sl) slots_.insert(it, sl);
  }
  void erase(int k, int j) { erase_slot(slot(k, j)); }
  void erase_slot(int sl) {
    auto it = std::lower_bound(slots_.begin(), slots_.end(), sl);
    if (it != slots_.end() && *it == sl) slots_.erase(it);
  }

  /// Groups active in response column k, ascending.
  std::vector<int> column(int k) const {
    std::vector<int> out;
    for (int sl : slots_)
      if (sl / G_ == k) out.push_back(sl % G_);
    return out;
  }

  /// Inactive slots, ascending.
  std::vector<int> inactive_slots() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(capacity() - s()));
    std::size_t a = 0;
    for (int sl = 0; sl < capacity(); ++sl) {
      if (a < slots_.size() && slots_[a] == sl) {
        ++a;
        continue;
      }
      out.push_back(sl);
    }
    return out;
  }

  int p_S(const GroupStructure& g) const {
    int total = 0;
    for (int sl : slots_) total += g.size(sl % G_);
    return total;
  }

  bool operator==(const SupportIndex& o) const {
    return G_ == o.G_ && d_ == o.d_ && slots_ == o.slots_;
  }
  bool operator<(const SupportIndex& o) const { return slots_ < o.slots_; }

 private:
  int G_ = 0;
  int d_ = 0;
  std::vector<int> slots_;
};

/// S_beta: the groups carrying at least one nonzero entry, per column.
inline SupportIndex support_of(const Matrix& values, const GroupStructure& g) {
  detail::require(values.rows() == g.p(), "support_of: row count differs from p");
  SupportIndex s(g.G(), static_cast<int>(values.cols()));
  for (int k = 0; k < values.cols(); ++k)
    for (int j = 0; j < g.G(); ++j)
      if ((values.col(k).segment(g.offset(j), g.size(j)).array() != 0.0).any()) s.insert(k, j);
  return s;
}

/// p x d coefficients whose stored support always equals S_beta.
class CoefficientMatrix {
 public:
  CoefficientMatrix() = default;
  CoefficientMatrix(const GroupStructure& g, int d)
      : values_(Matrix::Zero(g.p(), d)), support_(g.G(), d) {}

  static CoefficientMatrix from_values(const GroupStructure& g, Matrix values) {
    CoefficientMatrix c;
    c.support_ = support_of(values, g);
    c.values_ = std::move(values);
    return c;
  }

  /// Rejects values that disagree with the claimed support.
  static CoefficientMatrix with_support(const GroupStructure& g, Matrix values, SupportIndex s) {
    detail::require(support_of(values, g) == s, "CoefficientMatrix: values disagree with support");
    CoefficientMatrix c;
    c.values_ = std::move(values);
    c.support_ = std::move(s);
    return c;
  }

  const Matrix& values() const { return values_; }
  const SupportIndex& support() const { return support_; }
  int p() const { return static_cast<int>(values_.rows()); }
  int d() const { return static_cast<int>(values_.cols()); }

  auto block(const GroupStructure& g, int k, int j) const {
    return values_.col(k).segment(g.offset(j), g.size(j));
  }

  /// Activates (k, j) with a nonzero block.
  void set_block(const GroupStructure& g, int k, int j, const Eigen::Ref<const Vector>& b) {
    detail::require(b.size() == g.size(j), "set_block: block length mismatch");
    detail::require((b.array() != 0.0).any(), "set_block: block must be nonzero");
    values_.col(k).segment(g.offset(j), g.size(j)) = b;
    support_.insert(k, j);
  }

  void clear_block(const GroupStructure& g, int k, int j) {
    values_.col(k).segment(g.offset(j), g.size(j)).setZero();
    support_.erase(k, j);
  }

  /// Overwrites the active coefficients, stacked in slot order.
  void set_active(const GroupStructure& g, const Eigen::Ref<const Vector>& stacked) {
    int pos = 0;
    for (int sl : support_.slots()) {
      const int k = sl / g.G(), j = sl % g.G();
      values_.col(k).segment(g.offset(j), g.size(j)) = stacked.segment(pos, g.size(j));
      pos += g.size(j);
    }
    detail::require(support_of(values_, g) == support_, "set_active: zeroed an active block");
  }

  Vector active(const GroupStructure& g) const {
    Vector out(support_.p_S(g));
    int pos = 0;
    for (int sl : support_.slots()) {
      const int k = sl / g.G(), j = sl % g.G();
      out.segment(pos, g.size(j)) = values_.col(k).segment(g.offset(j), g.size(j));
      pos += g.size(j);
    }
    return out;
  }

 private:
  Matrix values_;
  SupportIndex support_;
};

/// Sigma = P diag(D) P'.
class CovarianceEigen {
 public:
  static constexpr double kOrthogonalityTol = 1e-10;

  CovarianceEigen() = default;
  CovarianceEigen(Matrix P, Vector D) : P_(std::move(P)), D_(std::move(D)) {
    detail::require(P_.rows() == P_.cols() && P_.rows() == D_.size(),
                    "CovarianceEigen: P must be d x d with d eigenvalues");
    detail::require((D_.array() > 0.0).all(), "CovarianceEigen: eigenvalues must be positive");
    const double err =
        (P_.transpose() * P_ - Matrix::Identity(P_.rows(), P_.cols())).norm();
    detail::require(err <= kOrthogonalityTol, "CovarianceEigen: P is not orthogonal");
  }

  static CovarianceEigen identity(int d) {
    return CovarianceEigen(Matrix::Identity(d, d), Vector::Ones(d));
  }

  /// Eigenvalues sorted descending.
  static CovarianceEigen from_matrix(const Matrix& sigma) {
    detail::require(sigma.rows() == sigma.cols(), "CovarianceEigen: matrix must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sigma + sigma.transpose()));
    detail::require(es.info() == Eigen::Success, "CovarianceEigen: eigendecomposition failed");
    const int d = static_cast<int>(sigma.rows());
    Matrix P(d, d);
    Vector D(d);
    for (int i = 0; i < d; ++i) {
      P.col(i) = es.eigenvectors().col(d - 1 - i);
      D(i) = es.eigenvalues()(d - 1 - i);
    }
    return CovarianceEigen(std::move(P), std::move(D));
  }

  int d() const { return static_cast<int>(D_.size()); }
  const Matrix& P() const { return P_; }
  const Vector& D() const { return D_; }
  Matrix reconstruct() const { return P_ * D_.asDiagonal() * P_.transpose(); }

 private:
  Matrix P_;
  Vector D_;
};

struct WishartPrior {
  double dof = 0.0;  // nu
  Matrix scale;      // Phi
};

struct HyperParams {
  Vector lambda;             // slab rate per response column
  double dim_exponent = 1.0;  // a in pi(s) ~ (G v n^p_max)^(-a s)
  double ig_mean = 1.0;
  double ig_shape = 1.0;
  std::optional<WishartPrior> wishart;

  void validate(int d) const {
    detail::require(lambda.size() == d, "HyperParams: need one lambda per response column");
    detail::require((lambda.array() > 0.0).all(), "HyperParams: lambda must be positive");
    detail::require(dim_exponent > 0.0, "HyperParams: dimension exponent must be positive");
    detail::require(ig_mean > 0.0 && ig_shape > 0.0, "HyperParams: inverse-Gaussian parameters must be positive");
    if (wishart) {
      detail::require(wishart->scale.rows() == d && wishart->scale.cols() == d,
                      "HyperParams: Wishart scale must be d x d");
      detail::require(wishart->dof > d - 1, "HyperParams: Wishart dof must exceed d - 1");
      Eigen::LLT<Matrix> llt(wishart->scale);
      detail::require(llt.info() == Eigen::Success && wishart->scale.isApprox(wishart->scale.transpose()),
                      "HyperParams: Wishart scale must be SPD");
    }
  }
};

// ---------------------------------------------------------------------------
// norms and vectorization

inline double spectral_norm(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(A);
  return svd.singularValues()(0);
}

/// ||X||_o: largest spectral norm over the group column blocks.
inline double group_operator_norm(const Matrix& X, const GroupStructure& g) {
  detail::require(X.cols() == g.p(), "group_operator_norm: X column count differs from p");
  double best = 0.0;
  for (int j = 0; j < g.G(); ++j)
    best = std::max(best, spectral_norm(X.middleCols(g.offset(j), g.size(j))));
  return best;
}

inline double l21_norm(const Eigen::Ref<const Vector>& v, const GroupStructure& g) {
  detail::require(v.size() == g.p(), "l21_norm: length differs from p");
  double total = 0.0;
  for (int j = 0; j < g.G(); ++j) total += v.segment(g.offset(j), g.size(j)).norm();
  return total;
}

/// Sum over columns of the per-column l2,1 norms.
inline double l21_norm_total(const Matrix& beta, const GroupStructure& g) {
  double total = 0.0;
  for (int k = 0; k < beta.cols(); ++k) total += l21_norm(beta.col(k), g);
  return total;
}

/// Vec(beta): columns stacked into a pd row vector.
inline RowVector vectorize(const Matrix& beta) {
  return Eigen::Map<const RowVector>(beta.data(), beta.size());
}

/// I_d kron X_i' as a pd x d block-diagonal matrix.
inline Matrix design_block(const Eigen::Ref<const RowVector>& x_row, int d) {
  detail::require(d >= 1, "design_block: d must be positive");
  const auto p = x_row.size();
  Matrix out = Matrix::Zero(p * d, d);
  for (int k = 0; k < d; ++k) out.block(k * p, k, p, 1) = x_row.transpose();
  return out;
}

/// Default slab rate: lower end of the admissible range with B_1 = B_2 = 1.
inline double default_lambda(const Matrix& X, const GroupStructure& g) {
  const double n = static_cast<double>(X.rows());
  const double denom = std::max(std::pow(static_cast<double>(g.G()), 1.0 / g.p_max()), n);
  const double norm = group_operator_norm(X, g);
  return norm > 0.0 ? norm / denom : 1.0 / denom;
}

}  // namespace mvss
