#include <gtest/gtest.h>

#include <random>
#include <set>

#include "mvss/bvm.hpp"
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

struct Problem {
  Dataset data;
  GroupStructure g;
  Matrix sigma0;
  HyperParams hp;
};

Problem problem(std::uint64_t seed, int n, std::vector<int> sizes, int d, double signal) {
  std::mt19937_64 rng(seed);
  Problem pr;
  pr.g = GroupStructure(std::move(sizes));
  const Matrix X = random_matrix(n, pr.g.p(), rng);
  const Matrix A = random_matrix(d, d, rng);
  pr.sigma0 = A * A.transpose() / d + 0.5 * Matrix::Identity(d, d);
  Matrix b0 = Matrix::Zero(pr.g.p(), d);
  b0(0, 0) = signal;
  if (d > 1) b0(pr.g.p() - 1, d - 1) = -signal;
  const Matrix L = Eigen::LLT<Matrix>(pr.sigma0).matrixL();
  pr.data = Dataset(X, X * b0 + random_matrix(n, d, rng) * L.transpose());
  pr.hp.lambda = Vector::Constant(d, 1.0);
  return pr;
}

}  // namespace

TEST(Enumeration, CountsOrderAndLimit) {
  EXPECT_EQ(support_count(3, 2, 2), 1.0 + 6.0 + 15.0);
  EXPECT_EQ(support_count(3, 2, 100), 64.0);
  const auto all = enumerate_supports(3, 2, 2);
  EXPECT_EQ(all.size(), 22u);
  std::set<SupportIndex> unique(all.begin(), all.end());
  EXPECT_EQ(unique.size(), all.size());
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_LE(all[i - 1].s(), all[i].s());
  EXPECT_TRUE(all.front().empty());
  EXPECT_THROW(enumerate_supports(10, 10, 5, 1000), EnumerationLimitExceeded);
  EXPECT_THROW(enumerate_supports(2, 2, -1), DimensionError);
}

TEST(RestrictedMle, MatchesKroneckerGls) {
  const Problem pr = problem(201, 30, {2, 1, 3}, 3, 1.0);
  for (const auto& S : {SupportIndex::from_sets(3, {{0}, {1, 2}, {0, 2}}), SupportIndex::from_sets(3, {{}, {2}, {}})}) {
    const RestrictedFit fit = restricted_mle(S, pr.data, pr.g, pr.sigma0);
    const oracle::Gls want = oracle::gls(S, pr.data.X, pr.data.Y, pr.g, pr.sigma0);
    ASSERT_EQ(fit.beta_hat.size(), want.beta.size());
    EXPECT_LE((fit.beta_hat - want.beta).norm(), 1e-9 * (1.0 + want.beta.norm()));
    EXPECT_LE((fit.info * pr.data.n() - want.gamma).norm(), 1e-9 * want.gamma.norm());
  }
}

TEST(RestrictedMle, RejectsUnderdeterminedSupport) {
  const Problem pr = problem(203, 2, {3}, 1, 1.0);
  EXPECT_THROW(restricted_mle(SupportIndex::from_sets(1, {{0}}), pr.data, pr.g, pr.sigma0), SingularInformation);
}

// Each weight is prior mass times the slab constant at zero times the
// Gaussian integral of the likelihood ratio; computed here from explicit
// Kronecker GLS and the likelihood evaluated twice.
TEST(MixtureWeights, MatchIndependentFormula) {
  const Problem pr = problem(205, 25, {1, 2}, 2, 0.4);
  const MixturePosterior mp = mixture_posterior(pr.data, pr.g, pr.sigma0, pr.hp, 4);
  ASSERT_EQ(mp.components.size(), 16u);
  const DimensionPrior prior(2, 2, 25, 2, 1.0);
  std::vector<double> lw;
  const double l0 = oracle::log_likelihood(Matrix::Zero(3, 2), pr.sigma0, pr.data.X, pr.data.Y);
  for (const auto& c : mp.components) {
    const SupportIndex& S = c.support;
    double v = prior.log_pmf(S.s()) - detail::log_binomial(4, S.s());
    if (!S.empty()) {
      const oracle::Gls fit = oracle::gls(S, pr.data.X, pr.data.Y, pr.g, pr.sigma0);
      Matrix full = Matrix::Zero(3, 2);
      const auto idx = oracle::vec_indices(S, pr.g);
      for (std::size_t a = 0; a < idx.size(); ++a) full(idx[a] % 3, idx[a] / 3) = fit.beta(static_cast<Eigen::Index>(a));
      const double m = static_cast<double>(fit.beta.size());
      v += oracle::log_likelihood(full, pr.sigma0, pr.data.X, pr.data.Y) - l0 + 0.5 * m * std::log(2.0 * std::numbers::pi) -
           0.5 * oracle::log_det_lu(fit.gamma);
      for (int sl : S.slots()) {
        const int sz = pr.g.size(sl % 2);
        v += sz * (std::log(1.0) - oracle::log_slab_const(sz));
      }
    }
    lw.push_back(v);
  }
  const double top = *std::max_element(lw.begin(), lw.end());
  double z = 0.0;
  for (double v : lw) z += std::exp(v - top);
  double total = 0.0;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    EXPECT_NEAR(mp.weight(i), std::exp(lw[i] - top) / z, 1e-9);
    total += mp.weight(i);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(MixtureWeights, ConcentrateOnTruthWithStrongSignal) {
  const Problem pr = problem(207, 400, {2, 2, 2}, 2, 1.5);
  const MixturePosterior mp = mixture_posterior(pr.data, pr.g, pr.sigma0, pr.hp, 3);
  const SupportIndex truth = SupportIndex::from_sets(3, {{0}, {2}});
  EXPECT_EQ(mp.components[mp.top()].support, truth);
  EXPECT_GT(mp.weight(mp.top()), 0.9);
  EXPECT_GE(mp.find(truth), 0);
  EXPECT_EQ(mp.find(SupportIndex::from_sets(3, {{0, 1, 2}, {0, 1, 2}})), -1);
}

TEST(MixtureSampling, MomentsAndSelfComparison) {
  const Problem pr = problem(209, 60, {1, 1, 2}, 2, 0.5);
  const MixturePosterior mp = mixture_posterior(pr.data, pr.g, pr.sigma0, pr.hp, 2);
  std::mt19937_64 rng(211);
  const auto draws = sample_mixture(mp, rng, 200000);
  std::vector<SupportIndex> supports;
  std::vector<Matrix> betas;
  for (const auto& d : draws) {
    supports.push_back(d.beta.support());
    betas.push_back(d.beta.values());
  }
  const ChainComparison cmp = compare_to_chain(mp, supports, betas);
  EXPECT_LT(cmp.support_tv, 0.01);
  EXPECT_EQ(cmp.unenumerated_mass, 0.0);
  EXPECT_NEAR(cmp.top_chain_frequency, cmp.top_weight, 0.01);
  const auto& top = mp.components[cmp.top_component];
  const Matrix cov = oracle::inverse_lu(top.info * mp.n);
  ASSERT_EQ(cmp.mean_discrepancy.size(), static_cast<std::size_t>(top.mean.size()));
  const double kept = cmp.top_chain_frequency * draws.size();
  for (std::size_t r = 0; r < cmp.mean_discrepancy.size(); ++r) {
    const double sd = std::sqrt(cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)));
    EXPECT_LT(std::abs(cmp.mean_discrepancy[r]), 4.0 * sd / std::sqrt(kept));
    EXPECT_LT(std::abs(cmp.sd_discrepancy[r]), 0.02 * sd);
  }
}

TEST(MixtureComparison, CountsMassOutsideTheEnumeration) {
  const Problem pr = problem(213, 40, {1, 1}, 1, 1.0);
  const MixturePosterior mp = mixture_posterior(pr.data, pr.g, pr.sigma0, pr.hp, 1);
  const std::vector<SupportIndex> chain(4, SupportIndex::from_sets(2, {{0, 1}}));
  const ChainComparison cmp = compare_to_chain(mp, chain, {});
  EXPECT_NEAR(cmp.unenumerated_mass, 1.0, 1e-12);
  EXPECT_NEAR(cmp.support_tv, 1.0, 1e-12);
  EXPECT_THROW(compare_to_chain(mp, {}, {}), DimensionError);
}

TEST(MixtureJson, RoundTrip) {
  const Problem pr = problem(215, 30, {2, 1}, 2, 0.8);
  const MixturePosterior mp = mixture_posterior(pr.data, pr.g, pr.sigma0, pr.hp, 2);
  const MixturePosterior back = mixture_from_json(nlohmann::json::parse(to_json(mp).dump()));
  ASSERT_EQ(back.components.size(), mp.components.size());
  EXPECT_EQ(back.groups, mp.groups);
  EXPECT_EQ(back.n, mp.n);
  EXPECT_EQ(back.cap, 2);
  for (std::size_t i = 0; i < mp.components.size(); ++i) {
    EXPECT_EQ(back.components[i].support, mp.components[i].support);
    EXPECT_NEAR(back.weight(i), mp.weight(i), 1e-12);
    EXPECT_LE((back.components[i].mean - mp.components[i].mean).norm(), 1e-12);
    EXPECT_LE((back.components[i].info - mp.components[i].info).norm(), 1e-12);
  }
}
