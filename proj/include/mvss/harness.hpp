#pragma once

// Experiment harness: configuration, synthetic data, replication driver and
// the five experiments (contraction, selection, bvm-compare, prior-checks,
// wishart-tails).
//
// Seeds. Replication r of an experiment uses
//   seed_r = splitmix64(master + r * 0x9E3779B97F4A7C15)
// where r counts replications across every cell of the experiment in order.
// The data generator is seeded with seed_r and the chain with
// splitmix64(seed_r + 1).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <nlohmann/json.hpp>

#include "mvss/bvm.hpp"
#include "mvss/core.hpp"
#include "mvss/io.hpp"
#include "mvss/likelihood.hpp"
#include "mvss/metrics.hpp"
#include "mvss/priors.hpp"
#include "mvss/sampler.hpp"
#include "mvss/stats.hpp"

namespace mvss::harness {

using nlohmann::json;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t replication_seed(std::uint64_t master, std::uint64_t r) {
  return splitmix64(master + r * 0x9E3779B97F4A7C15ULL);
}

inline std::uint64_t chain_seed(std::uint64_t rep_seed) { return splitmix64(rep_seed + 1); }

// ---------------------------------------------------------------------------
// configuration

enum class SignalMode { absolute, beta_min_fraction };
enum class SigmaKind { rotation, diagonal };

struct DataSpec {
  int n = 200;
  int G = 20;
  int group_size = 2;
  std::vector<int> group_sizes;  // overrides group_size when nonempty
  int d = 2;
  int s0 = 3;
  // absolute: ||beta_jk|| of every active block. beta_min_fraction:
  // ||beta_jk||^2 = signal * beta-min threshold computed from X.
  double signal = 1.0;
  SignalMode signal_mode = SignalMode::absolute;
  std::string design = "gaussian";  // or "csv"
  std::string design_path;
  SigmaKind sigma_kind = SigmaKind::rotation;
  double b1 = 0.5;
  double b2 = 2.0;

  GroupStructure groups() const {
    return group_sizes.empty() ? GroupStructure::uniform(G, group_size) : GroupStructure(group_sizes);
  }

  void validate() const {
    const GroupStructure g = groups();
    mvss::detail::require(n >= 1, "DataSpec: n must be positive");
    mvss::detail::require(d >= 1, "DataSpec: d must be positive");
    mvss::detail::require(s0 >= 0 && s0 <= g.G() * d, "DataSpec: need 0 <= s0 <= G d");
    mvss::detail::require(b1 > 0.0 && b1 <= b2, "DataSpec: need 0 < b1 <= b2");
    mvss::detail::require(signal >= 0.0 && std::isfinite(signal), "DataSpec: signal must be nonnegative");
    mvss::detail::require(design == "gaussian" || design == "csv", "DataSpec: design must be gaussian or csv");
    mvss::detail::require(design != "csv" || !design_path.empty(), "DataSpec: csv design needs design_path");
  }
};

struct HyperSpec {
  std::vector<double> lambda;  // empty: default rate; one value: shared
  double dim_exponent = 1.0;
  double ig_mean = 1.0;
  double ig_shape = 1.0;
  std::optional<double> wishart_dof;  // Phi = wishart_scale * I
  double wishart_scale = 1.0;

  HyperParams build(const Matrix& X, const GroupStructure& g, int d) const {
    HyperParams hp;
    if (lambda.empty()) {
      hp.lambda = Vector::Constant(d, default_lambda(X, g));
    } else if (lambda.size() == 1) {
      hp.lambda = Vector::Constant(d, lambda.front());
    } else {
      mvss::detail::require(static_cast<int>(lambda.size()) == d, "HyperSpec: lambda needs 1 or d entries");
      hp.lambda = Eigen::Map<const Vector>(lambda.data(), d);
    }
    hp.dim_exponent = dim_exponent;
    hp.ig_mean = ig_mean;
    hp.ig_shape = ig_shape;
    if (wishart_dof) hp.wishart = WishartPrior{*wishart_dof, wishart_scale * Matrix::Identity(d, d)};
    hp.validate(d);
    return hp;
  }
};

struct BvmSpec {
  std::optional<int> cap;  // default: M2 s* rounded
  long limit = kDefaultSupportLimit;
  double misspecification = 4.0;  // Sigma0 handed to the mixture is scaled by this in the contrast run
  bool run_chain = true;
};

struct WishartCase {
  int dof = 10;
  int d = 3;
};

struct WishartSpec {
  std::vector<WishartCase> cases{{10, 3}, {25, 5}};
  int draws = 10000;
  int pilot_draws = 2000;
  double t1_factor = 2.0;  // t1 = t1_factor * nu d
  double t2_factor = 0.5;  // t2 = t2_factor * (sqrt(nu) - sqrt(d))^2
  double t3 = 1.0;
};

struct PriorCheckSpec {
  long slab_samples = 1000000;
  long radius_samples = 100000;
  long ig_samples = 100000;
  long haar_samples = 100000;
  long chain_iterations = 1000000;
  long chain_thin = 250;
  double alpha = 0.01;
  double slab_tolerance = 0.01;
  double tv_tolerance = 0.02;
};

struct ExperimentConfig {
  std::string scenario = "standard";
  std::string experiment = "contraction";
  DataSpec data;
  HyperSpec hyper;
  SamplerConfig sampler;
  RateConstants rates;
  int replications = 20;
  std::uint64_t seed = 20240601;
  std::string output_dir = "out";
  int workers = 1;
  std::vector<int> n_values{100, 200, 400};
  BvmSpec bvm;
  WishartSpec wishart;
  PriorCheckSpec prior_checks;

  void validate() const {
    data.validate();
    sampler.validate();
    mvss::detail::require(replications >= 1, "ExperimentConfig: replications must be positive");
    mvss::detail::require(workers >= 1, "ExperimentConfig: workers must be positive");
    mvss::detail::require(!n_values.empty(), "ExperimentConfig: n_values must be nonempty");
  }
};

inline SamplerConfig experiment_sampler_defaults() {
  SamplerConfig c;
  c.iterations = 20000;
  c.burn_in = 5000;
  c.thin = 2;
  return c;
}

/// Defaults per experiment; the data block is the standard synthetic instance
/// unless an experiment needs another shape.
inline ExperimentConfig default_config(const std::string& experiment = "contraction") {
  ExperimentConfig c;
  c.experiment = experiment;
  c.sampler = experiment_sampler_defaults();
  if (experiment == "contraction") {
    c.scenario = "contraction-g50";
    c.data.G = 50;
    // squared block norm 2.25, above the n = 100 beta-min threshold (about
    // 1.1) so that every n in the sweep is past detection
    c.data.signal = 1.5;
  } else if (experiment == "selection") {
    c.scenario = "selection-n400";
    c.data.n = 400;
  } else if (experiment == "bvm-compare") {
    c.scenario = "tiny-small-lambda";
    c.data.n = 200;
    c.data.G = 3;
    c.data.s0 = 2;
    c.replications = 5;
  } else if (experiment == "prior-checks") {
    c.scenario = "prior-checks";
    c.replications = 1;
  } else if (experiment == "wishart-tails") {
    c.scenario = "wishart-tails";
    c.replications = 1;
  } else {
    throw DimensionError("unknown experiment '" + experiment + "'");
  }
  return c;
}

// -- JSON -------------------------------------------------------------------

inline std::string to_string(SignalMode m) { return m == SignalMode::absolute ? "absolute" : "beta_min_fraction"; }
inline std::string to_string(SigmaKind k) { return k == SigmaKind::rotation ? "rotation" : "diagonal"; }

inline json to_json(const SamplerConfig& s) {
  return {{"iterations", s.iterations},
          {"burn_in", s.burn_in},
          {"thin", s.thin},
          {"sigma_beta", s.tuning.sigma_beta},
          {"sigma_log_d", s.tuning.sigma_log_d},
          {"eps_p", s.tuning.eps_p},
          {"p_birth", s.tuning.p_birth},
          {"p_death", s.tuning.p_death},
          {"p_swap", s.tuning.p_swap},
          {"birth_slab_weight", s.tuning.birth_slab_weight},
          {"p_support", s.p_support},
          {"p_beta", s.p_beta},
          {"p_covariance", s.p_covariance},
          {"covariance_mode", to_string(s.covariance_mode)},
          {"adapt", s.adapt},
          {"target_accept", s.target_accept},
          {"greedy_start", s.greedy_start},
          {"seed", s.seed}};
}

inline json to_json(const ExperimentConfig& c) {
  json data = {{"n", c.data.n},
               {"G", c.data.G},
               {"group_size", c.data.group_size},
               {"group_sizes", c.data.group_sizes},
               {"d", c.data.d},
               {"s0", c.data.s0},
               {"signal", c.data.signal},
               {"signal_mode", to_string(c.data.signal_mode)},
               {"design", c.data.design},
               {"design_path", c.data.design_path},
               {"sigma0", {{"kind", to_string(c.data.sigma_kind)}, {"b1", c.data.b1}, {"b2", c.data.b2}}}};
  json hyper = {{"lambda", c.hyper.lambda},
                {"dim_exponent", c.hyper.dim_exponent},
                {"ig_mean", c.hyper.ig_mean},
                {"ig_shape", c.hyper.ig_shape},
                {"wishart_dof", c.hyper.wishart_dof ? json(*c.hyper.wishart_dof) : json(nullptr)},
                {"wishart_scale", c.hyper.wishart_scale}};
  json cases = json::array();
  for (const auto& w : c.wishart.cases) cases.push_back({{"dof", w.dof}, {"d", w.d}});
  return {{"scenario", c.scenario},
          {"experiment", c.experiment},
          {"data", data},
          {"hyper", hyper},
          {"sampler", to_json(c.sampler)},
          {"rates", {{"M1", c.rates.M1}, {"M2", c.rates.M2}, {"M3", c.rates.M3}, {"M4", c.rates.M4}}},
          {"replications", c.replications},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"workers", c.workers},
          {"n_values", c.n_values},
          {"bvm",
           {{"cap", c.bvm.cap ? json(*c.bvm.cap) : json(nullptr)},
            {"limit", c.bvm.limit},
            {"misspecification", c.bvm.misspecification},
            {"run_chain", c.bvm.run_chain}}},
          {"wishart",
           {{"cases", cases},
            {"draws", c.wishart.draws},
            {"pilot_draws", c.wishart.pilot_draws},
            {"t1_factor", c.wishart.t1_factor},
            {"t2_factor", c.wishart.t2_factor},
            {"t3", c.wishart.t3}}},
          {"prior_checks",
           {{"slab_samples", c.prior_checks.slab_samples},
            {"radius_samples", c.prior_checks.radius_samples},
            {"ig_samples", c.prior_checks.ig_samples},
            {"haar_samples", c.prior_checks.haar_samples},
            {"chain_iterations", c.prior_checks.chain_iterations},
            {"chain_thin", c.prior_checks.chain_thin},
            {"alpha", c.prior_checks.alpha},
            {"slab_tolerance", c.prior_checks.slab_tolerance},
            {"tv_tolerance", c.prior_checks.tv_tolerance}}}};
}

namespace detail {

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object()) throw io::ParseError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!reference.contains(it.key())) throw io::ParseError(where + ": unknown key '" + it.key() + "'");
}

}  // namespace detail

inline SamplerConfig sampler_from_json(const json& j, SamplerConfig s = experiment_sampler_defaults()) {
  detail::reject_unknown(j, to_json(s), "sampler");
  detail::take(j, "iterations", s.iterations);
  detail::take(j, "burn_in", s.burn_in);
  detail::take(j, "thin", s.thin);
  detail::take(j, "sigma_beta", s.tuning.sigma_beta);
  detail::take(j, "sigma_log_d", s.tuning.sigma_log_d);
  detail::take(j, "eps_p", s.tuning.eps_p);
  detail::take(j, "p_birth", s.tuning.p_birth);
  detail::take(j, "p_death", s.tuning.p_death);
  detail::take(j, "p_swap", s.tuning.p_swap);
  detail::take(j, "birth_slab_weight", s.tuning.birth_slab_weight);
  detail::take(j, "p_support", s.p_support);
  detail::take(j, "p_beta", s.p_beta);
  detail::take(j, "p_covariance", s.p_covariance);
  if (j.contains("covariance_mode")) s.covariance_mode = covariance_mode_from_string(j.at("covariance_mode"));
  detail::take(j, "adapt", s.adapt);
  detail::take(j, "target_accept", s.target_accept);
  detail::take(j, "greedy_start", s.greedy_start);
  detail::take(j, "seed", s.seed);
  s.validate();
  return s;
}

/// Missing keys fall back to the experiment's defaults; unknown keys fail.
inline ExperimentConfig config_from_json(const json& j) {
  std::string experiment = "contraction";
  detail::take(j, "experiment", experiment);
  ExperimentConfig c = default_config(experiment);
  const json ref = to_json(c);
  detail::reject_unknown(j, ref, "config");
  detail::take(j, "scenario", c.scenario);
  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::reject_unknown(d, ref.at("data"), "data");
    detail::take(d, "n", c.data.n);
    detail::take(d, "G", c.data.G);
    detail::take(d, "group_size", c.data.group_size);
    detail::take(d, "group_sizes", c.data.group_sizes);
    detail::take(d, "d", c.data.d);
    detail::take(d, "s0", c.data.s0);
    detail::take(d, "signal", c.data.signal);
    if (d.contains("signal_mode")) {
      const std::string m = d.at("signal_mode");
      if (m == "absolute") c.data.signal_mode = SignalMode::absolute;
      else if (m == "beta_min_fraction") c.data.signal_mode = SignalMode::beta_min_fraction;
      else throw io::ParseError("data.signal_mode: unknown value '" + m + "'");
    }
    detail::take(d, "design", c.data.design);
    detail::take(d, "design_path", c.data.design_path);
    if (d.contains("sigma0")) {
      const json& s = d.at("sigma0");
      detail::reject_unknown(s, ref.at("data").at("sigma0"), "data.sigma0");
      if (s.contains("kind")) {
        const std::string k = s.at("kind");
        if (k == "rotation") c.data.sigma_kind = SigmaKind::rotation;
        else if (k == "diagonal") c.data.sigma_kind = SigmaKind::diagonal;
        else throw io::ParseError("data.sigma0.kind: unknown value '" + k + "'");
      }
      detail::take(s, "b1", c.data.b1);
      detail::take(s, "b2", c.data.b2);
    }
  }
  if (j.contains("hyper")) {
    const json& h = j.at("hyper");
    detail::reject_unknown(h, ref.at("hyper"), "hyper");
    if (h.contains("lambda") && h.at("lambda").is_number()) c.hyper.lambda = {h.at("lambda").get<double>()};
    else detail::take(h, "lambda", c.hyper.lambda);
    detail::take(h, "dim_exponent", c.hyper.dim_exponent);
    detail::take(h, "ig_mean", c.hyper.ig_mean);
    detail::take(h, "ig_shape", c.hyper.ig_shape);
    if (h.contains("wishart_dof") && !h.at("wishart_dof").is_null()) c.hyper.wishart_dof = h.at("wishart_dof").get<double>();
    detail::take(h, "wishart_scale", c.hyper.wishart_scale);
  }
  if (j.contains("sampler")) c.sampler = sampler_from_json(j.at("sampler"), c.sampler);
  if (j.contains("rates")) {
    const json& r = j.at("rates");
    detail::reject_unknown(r, ref.at("rates"), "rates");
    detail::take(r, "M1", c.rates.M1);
    detail::take(r, "M2", c.rates.M2);
    detail::take(r, "M3", c.rates.M3);
    detail::take(r, "M4", c.rates.M4);
  }
  detail::take(j, "replications", c.replications);
  detail::take(j, "seed", c.seed);
  detail::take(j, "output_dir", c.output_dir);
  detail::take(j, "workers", c.workers);
  detail::take(j, "n_values", c.n_values);
  if (j.contains("bvm")) {
    const json& b = j.at("bvm");
    detail::reject_unknown(b, ref.at("bvm"), "bvm");
    if (b.contains("cap") && !b.at("cap").is_null()) c.bvm.cap = b.at("cap").get<int>();
    detail::take(b, "limit", c.bvm.limit);
    detail::take(b, "misspecification", c.bvm.misspecification);
    detail::take(b, "run_chain", c.bvm.run_chain);
  }
  if (j.contains("wishart")) {
    const json& w = j.at("wishart");
    detail::reject_unknown(w, ref.at("wishart"), "wishart");
    if (w.contains("cases")) {
      c.wishart.cases.clear();
      for (const auto& e : w.at("cases")) c.wishart.cases.push_back({e.at("dof").get<int>(), e.at("d").get<int>()});
    }
    detail::take(w, "draws", c.wishart.draws);
    detail::take(w, "pilot_draws", c.wishart.pilot_draws);
    detail::take(w, "t1_factor", c.wishart.t1_factor);
    detail::take(w, "t2_factor", c.wishart.t2_factor);
    detail::take(w, "t3", c.wishart.t3);
  }
  if (j.contains("prior_checks")) {
    const json& p = j.at("prior_checks");
    detail::reject_unknown(p, ref.at("prior_checks"), "prior_checks");
    detail::take(p, "slab_samples", c.prior_checks.slab_samples);
    detail::take(p, "radius_samples", c.prior_checks.radius_samples);
    detail::take(p, "ig_samples", c.prior_checks.ig_samples);
    detail::take(p, "haar_samples", c.prior_checks.haar_samples);
    detail::take(p, "chain_iterations", c.prior_checks.chain_iterations);
    detail::take(p, "chain_thin", c.prior_checks.chain_thin);
    detail::take(p, "alpha", c.prior_checks.alpha);
    detail::take(p, "slab_tolerance", c.prior_checks.slab_tolerance);
    detail::take(p, "tv_tolerance", c.prior_checks.tv_tolerance);
  }
  c.validate();
  return c;
}

namespace detail {

inline json schema_node(const json& value) {
  json node;
  if (value.is_object()) {
    node["type"] = "object";
    node["additionalProperties"] = false;
    for (auto it = value.begin(); it != value.end(); ++it) node["properties"][it.key()] = schema_node(it.value());
    return node;
  }
  if (value.is_boolean()) node["type"] = "boolean";
  else if (value.is_number_integer() || value.is_number_unsigned()) node["type"] = "integer";
  else if (value.is_number()) node["type"] = "number";
  else if (value.is_string()) node["type"] = "string";
  else if (value.is_array()) node["type"] = "array";
  else node["type"] = json::array({"number", "null"});
  node["default"] = value;
  return node;
}

}  // namespace detail

/// JSON Schema of the config document; defaults are those of the standard
/// instance with the experiment sampler settings.
inline json config_schema() {
  ExperimentConfig c = default_config("contraction");
  c.scenario = "standard";
  c.data = DataSpec{};
  json schema = detail::schema_node(to_json(c));
  schema["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  schema["title"] = "mvss experiment configuration";
  auto& p = schema["properties"];
  p["experiment"]["enum"] = {"contraction", "selection", "bvm-compare", "prior-checks", "wishart-tails"};
  p["data"]["properties"]["signal_mode"]["enum"] = {"absolute", "beta_min_fraction"};
  p["data"]["properties"]["design"]["enum"] = {"gaussian", "csv"};
  p["data"]["properties"]["sigma0"]["properties"]["kind"]["enum"] = {"rotation", "diagonal"};
  p["data"]["properties"]["group_sizes"]["items"] = {{"type", "integer"}, {"minimum", 1}};
  p["hyper"]["properties"]["lambda"] = {{"type", json::array({"number", "array"})},
                                        {"items", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                                        {"default", json::array()},
                                        {"description", "empty: ||X||_o / (G^(1/p_max) v n)"}};
  p["sampler"]["properties"]["covariance_mode"]["enum"] = {"eigen", "inverse-wishart", "fixed"};
  p["bvm"]["properties"]["cap"]["type"] = json::array({"integer", "null"});
  p["bvm"]["properties"]["cap"]["description"] = "null: M2 s* rounded";
  p["n_values"]["items"] = {{"type", "integer"}, {"minimum", 1}};
  return schema;
}

// ---------------------------------------------------------------------------
// synthetic data

struct SyntheticData {
  GroupStructure groups;
  Dataset data;
  Matrix beta0;
  Matrix sigma0;
  SupportIndex S0;
  HyperParams hyper;
  RateSummary rates;
  double block_norm = 0.0;   // ||beta_jk|| of the active blocks
  double l21_total = 0.0;    // sum_k ||beta0_k||_{2,1}
  double penalty = 0.0;      // sum_k lambda_k ||beta0_k||_{2,1}
  bool in_B0 = false;
  bool in_H0 = false;
  bool beta_min_ok = false;

  json summary() const {
    return {{"block_norm", block_norm},          {"l21_total", l21_total},
            {"penalty", penalty},                {"in_B0", in_B0},
            {"in_H0", in_H0},                    {"beta_min_ok", beta_min_ok},
            {"s0", S0.s()},                      {"rates", to_json(rates)},
            {"lambda", std::vector<double>(hyper.lambda.data(), hyper.lambda.data() + hyper.lambda.size())}};
  }
};

template <class Rng>
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> z;
  Matrix A(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) A(r, c) = z(rng);
  return A;
}

/// Subset budget for the restricted eigenvalue behind the beta-min threshold;
/// beyond it the value is a search-based upper bound.
inline constexpr long kGenerationPhiBudget = 1L << 16;

/// X, then Sigma0, then the support and block directions, then the noise.
template <class Rng>
SyntheticData generate_data(const DataSpec& spec, const HyperSpec& hyper, const RateConstants& constants, Rng& rng) {
  spec.validate();
  SyntheticData out;
  out.groups = spec.groups();
  const GroupStructure& g = out.groups;
  const int n = spec.n, d = spec.d;

  Matrix X;
  if (spec.design == "csv") {
    X = io::read_matrix_csv(std::filesystem::path(spec.design_path));
    mvss::detail::require(X.cols() == g.p(), "generate_data: design CSV has " + std::to_string(X.cols()) +
                                           " columns but the groups sum to " + std::to_string(g.p()));
    mvss::detail::require(X.rows() == n, "generate_data: design CSV has " + std::to_string(X.rows()) +
                                       " rows but n = " + std::to_string(n));
  } else {
    X = gaussian_matrix(n, g.p(), rng);
  }

  std::uniform_real_distribution<double> eig(spec.b1, spec.b2);
  Vector D(d);
  for (int k = 0; k < d; ++k) D(k) = eig(rng);
  const Matrix Q = spec.sigma_kind == SigmaKind::rotation ? sample_haar_orthogonal(d, rng) : Matrix::Identity(d, d);
  out.sigma0 = Q * D.asDiagonal() * Q.transpose();
  out.sigma0 = 0.5 * (out.sigma0 + out.sigma0.transpose());

  out.hyper = hyper.build(X, g, d);
  out.rates = theoretical_rates(X, g, d, spec.s0, out.hyper.lambda.maxCoeff(), constants, kGenerationPhiBudget);
  out.block_norm = spec.signal_mode == SignalMode::absolute
                       ? spec.signal
                       : std::sqrt(spec.signal * out.rates.beta_min_threshold);

  out.beta0 = Matrix::Zero(g.p(), d);
  out.S0 = SupportIndex(g.G(), d);
  if (out.block_norm > 0.0) {
    std::vector<int> slots(static_cast<std::size_t>(g.G() * d));
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(static_cast<std::size_t>(spec.s0));
    std::sort(slots.begin(), slots.end());
    for (int sl : slots) {
      const int k = sl / g.G(), j = sl % g.G();
      Vector u = gaussian_matrix(g.size(j), 1, rng);
      u *= out.block_norm / u.norm();
      out.beta0.col(k).segment(g.offset(j), g.size(j)) = u;
      out.S0.insert_slot(sl);
    }
  }

  const Eigen::LLT<Matrix> llt(out.sigma0);
  const Matrix noise = gaussian_matrix(n, d, rng) * Matrix(llt.matrixU());
  out.data = Dataset(X, X * out.beta0 + noise);

  out.l21_total = l21_norm_total(out.beta0, g);
  out.penalty = 0.0;
  for (int k = 0; k < d; ++k) out.penalty += out.hyper.lambda(k) * l21_norm(out.beta0.col(k), g);
  out.in_B0 = out.l21_total <= out.rates.beta_bar;
  out.in_H0 = (D.array() >= spec.b1).all() && (D.array() <= spec.b2).all();
  // relative slack so that signal = threshold survives the sqrt round trip
  out.beta_min_ok =
      out.S0.s() == 0 || out.block_norm * out.block_norm >= out.rates.beta_min_threshold * (1.0 - 1e-12);
  return out;
}

inline void save_synthetic(const std::filesystem::path& dir, const SyntheticData& s) {
  io::save_dataset(io::DataFiles::in(dir), s.data, s.groups);
  io::write_matrix_csv(dir / "beta0.csv", s.beta0);
  io::write_matrix_csv(dir / "sigma0.csv", s.sigma0);
  json truth = s.summary();
  json support = json::array();
  for (int sl : s.S0.slots()) support.push_back({sl / s.groups.G(), sl % s.groups.G()});
  truth["support"] = support;
  io::write_json(dir / "truth.json", truth);
}

// ---------------------------------------------------------------------------
// fitting one replication

struct FitSummary {
  ChainDiagnostics diagnostics;
  double prediction_loss = 0.0;  // posterior mean of ||X (beta - beta0)||_F^2 / n
  double frobenius_loss = 0.0;   // posterior mean of ||beta - beta0||_F^2
  double l21_sq_loss = 0.0;      // posterior mean of (sum_k ||beta_k - beta0_k||_{2,1})^2
  double mean_s = 0.0;
  SupportIndex modal;
  double truth_frequency = 0.0;  // fraction of kept draws on S0
  std::vector<SupportIndex> supports;
  std::vector<Matrix> betas;
};

inline FitSummary fit_synthetic(const SyntheticData& syn, SamplerConfig config, bool keep_draws = false) {
  const Posterior post(syn.data, syn.groups, syn.hyper);
  if (config.covariance_mode == CovarianceMode::fixed && !config.initial_sigma) config.initial_sigma = syn.sigma0;
  FitSummary out;
  long kept = 0;
  const double n = std::max(1, syn.data.n());
  out.diagnostics = run_chain(post, config, [&](const ChainState& st) {
    const RecoveryLosses l = recovery_report(st.beta.values(), syn.beta0, syn.data.X, syn.groups);
    out.prediction_loss += l.prediction / n;
    out.frobenius_loss += l.frobenius;
    out.l21_sq_loss += l.l21_sq;
    out.mean_s += st.support().s();
    ++kept;
    if (keep_draws) {
      out.supports.push_back(st.support());
      out.betas.push_back(st.beta.values());
    }
  });
  if (kept > 0) {
    out.prediction_loss /= kept;
    out.frobenius_loss /= kept;
    out.l21_sq_loss /= kept;
    out.mean_s /= kept;
  }
  out.modal = out.diagnostics.modal_support();
  const auto it = out.diagnostics.support_visits.find(syn.S0);
  out.truth_frequency = it == out.diagnostics.support_visits.end() || kept == 0
                            ? 0.0
                            : static_cast<double>(it->second) / static_cast<double>(kept);
  return out;
}

// ---------------------------------------------------------------------------
// reports

struct Aggregate {
  long count = 0;
  double mean = 0.0, sd = 0.0, q05 = 0.0, q50 = 0.0, q95 = 0.0;

  json to_json() const {
    return {{"count", count}, {"mean", mean}, {"sd", sd}, {"q05", q05}, {"q50", q50}, {"q95", q95}};
  }
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.count = static_cast<long>(xs.size());
  if (xs.empty()) return a;
  a.mean = stats::mean(xs);
  a.sd = xs.size() > 1 ? std::sqrt(stats::variance(xs)) : 0.0;
  a.q05 = stats::quantile(xs, 0.05);
  a.q50 = stats::quantile(xs, 0.5);
  a.q95 = stats::quantile(xs, 0.95);
  return a;
}

struct AggregateKey {
  std::string metric;
  std::string by;  // empty: over all rows
};

/// Aggregates of `metric` over rows, optionally split by the value of `by`.
/// Booleans count as 0/1.
inline json aggregate_rows(const std::vector<json>& rows, const AggregateKey& key) {
  std::map<std::string, std::vector<double>> cells;
  for (const auto& r : rows) {
    if (!r.contains(key.metric) || r.at(key.metric).is_null()) continue;
    const json& v = r.at(key.metric);
    const double x = v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>();
    cells[key.by.empty() ? std::string("all") : r.at(key.by).dump()].push_back(x);
  }
  json out = json::object();
  for (const auto& [cell, xs] : cells) out[cell] = aggregate(xs).to_json();
  return out;
}

struct RunReport {
  std::string experiment;
  std::string scenario;
  json config;
  std::vector<json> rows;
  std::vector<AggregateKey> keys;
  json aggregates = json::object();
  json rates = json::object();
  json summary = json::object();  // experiment-level verdicts
  std::map<std::string, std::string> tables;  // file name -> CSV text
  double wall_seconds = 0.0;

  void aggregate_all() {
    aggregates = json::object();
    for (const auto& k : keys) aggregates[k.by.empty() ? k.metric : k.metric + "|" + k.by] = aggregate_rows(rows, k);
  }

  json to_json() const {
    return {{"experiment", experiment}, {"scenario", scenario}, {"config", config},     {"rows", rows},
            {"aggregates", aggregates}, {"rates", rates},       {"summary", summary}, {"wall_seconds", wall_seconds}};
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    io::write_json(dir / "report.json", to_json());
    for (const auto& [name, text] : tables) {
      std::ofstream out(dir / name);
      out << text;
    }
  }
};

/// Runs fn(0..count-1) on up to `workers` threads; results keep index order
/// and the first failure is rethrown tagged with its replication index.
inline std::vector<json> run_replications(int count, int workers, const std::function<json(int)>& fn) {
  std::vector<json> out(static_cast<std::size_t>(count));
  std::vector<std::string> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        out[static_cast<std::size_t>(i)] = fn(i);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min(workers, count));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (int i = 0; i < count; ++i)
    if (!errors[static_cast<std::size_t>(i)].empty())
      throw std::runtime_error("replication " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)]);
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string csv_row(const std::vector<double>& xs) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  os << '\n';
  return os.str();
}

inline json support_json(const SupportIndex& S) {
  json a = json::array();
  for (int sl : S.slots()) a.push_back({sl / S.G(), sl % S.G()});
  return a;
}

inline RunReport start_report(const ExperimentConfig& c) {
  RunReport r;
  r.experiment = c.experiment;
  r.scenario = c.scenario;
  r.config = to_json(c);
  return r;
}

inline SamplerConfig seeded(SamplerConfig s, std::uint64_t rep_seed) {
  s.seed = chain_seed(rep_seed);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// experiments

/// Posterior prediction loss across n; each n gets `replications` datasets.
inline RunReport run_contraction(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep = detail::start_report(c);
  const int R = c.replications;
  const int cells = static_cast<int>(c.n_values.size());
  rep.rows = run_replications(R * cells, c.workers, [&](int idx) {
    const auto t = std::chrono::steady_clock::now();
    DataSpec spec = c.data;
    spec.n = c.n_values[static_cast<std::size_t>(idx / R)];
    const std::uint64_t seed = replication_seed(c.seed, static_cast<std::uint64_t>(idx));
    std::mt19937_64 rng(seed);
    const SyntheticData syn = generate_data(spec, c.hyper, c.rates, rng);
    const FitSummary fit = fit_synthetic(syn, detail::seeded(c.sampler, seed));
    return json{{"n", spec.n},
                {"replication", idx % R},
                {"seed", seed},
                {"prediction_loss", fit.prediction_loss},
                {"frobenius_loss", fit.frobenius_loss},
                {"l21_sq_loss", fit.l21_sq_loss},
                {"mean_s", fit.mean_s},
                {"modal_is_truth", fit.modal == syn.S0},
                {"truth_frequency", fit.truth_frequency},
                {"eps_n_sq", syn.rates.eps_n * syn.rates.eps_n},
                {"in_B0", syn.in_B0},
                {"beta_min_ok", syn.beta_min_ok},
                {"beta_acceptance", fit.diagnostics.acceptance_rate(Move::beta)},
                {"diagnostics", fit.diagnostics.to_json()},
                {"seconds", detail::seconds_since(t)}};
  });
  rep.keys = {{"prediction_loss", "n"}, {"frobenius_loss", "n"}, {"modal_is_truth", "n"}, {"eps_n_sq", "n"},
              {"beta_min_ok", "n"}};
  rep.aggregate_all();

  std::string table = "n,mean_prediction_loss,q05,q50,q95,eps_n_sq\n";
  std::vector<double> means;
  bool decreasing = true;
  for (int n : c.n_values) {
    const json& a = rep.aggregates.at("prediction_loss|n").at(std::to_string(n));
    const json& e = rep.aggregates.at("eps_n_sq|n").at(std::to_string(n));
    table += detail::csv_row({static_cast<double>(n), a.at("mean"), a.at("q05"), a.at("q50"), a.at("q95"), e.at("mean")});
    if (!means.empty() && a.at("mean").get<double>() >= means.back()) decreasing = false;
    means.push_back(a.at("mean"));
  }
  rep.tables["contraction.csv"] = table;
  const double ratio = means.front() / means.back();
  rep.summary = {{"mean_prediction_loss", means},
                 {"decreasing", decreasing},
                 {"ratio_first_last", ratio},
                 {"ratio_in_2_8", ratio >= 2.0 && ratio <= 8.0}};
  DataSpec last = c.data;
  last.n = c.n_values.back();
  rep.rates = {{"eps_n_at_n", json::array()}};
  for (int n : c.n_values)
    rep.rates["eps_n_at_n"].push_back({n, contraction_rate(n, last.groups().G(), last.d, last.groups().p_max(), last.s0)});
  rep.wall_seconds = detail::seconds_since(t0);
  return rep;
}

/// Modal-support recovery at the configured signal.
inline RunReport run_selection(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep = detail::start_report(c);
  rep.rows = run_replications(c.replications, c.workers, [&](int idx) {
    const auto t = std::chrono::steady_clock::now();
    const std::uint64_t seed = replication_seed(c.seed, static_cast<std::uint64_t>(idx));
    std::mt19937_64 rng(seed);
    const SyntheticData syn = generate_data(c.data, c.hyper, c.rates, rng);
    const FitSummary fit = fit_synthetic(syn, detail::seeded(c.sampler, seed));
    const SelectionReport sel = selection_report(fit.modal, syn.S0);
    return json{{"replication", idx},
                {"seed", seed},
                {"modal_is_truth", sel.exact},
                {"missed", sel.missed},
                {"false_groups", sel.false_groups},
                {"truth_frequency", fit.truth_frequency},
                {"block_norm_sq", syn.block_norm * syn.block_norm},
                {"beta_min_threshold", syn.rates.beta_min_threshold},
                {"beta_min_ok", syn.beta_min_ok},
                {"modal_support", detail::support_json(fit.modal)},
                {"truth", detail::support_json(syn.S0)},
                {"prediction_loss", fit.prediction_loss},
                {"diagnostics", fit.diagnostics.to_json()},
                {"seconds", detail::seconds_since(t)}};
  });
  rep.keys = {{"modal_is_truth", ""}, {"missed", ""}, {"false_groups", ""}, {"truth_frequency", ""},
              {"beta_min_threshold", ""}, {"beta_min_ok", ""}};
  rep.aggregate_all();
  long exact = 0;
  for (const auto& r : rep.rows) exact += r.at("modal_is_truth").get<bool>() ? 1 : 0;
  rep.summary = {{"exact", exact},
                 {"replications", c.replications},
                 {"exact_fraction", static_cast<double>(exact) / c.replications}};
  std::string table = "replication,modal_is_truth,missed,false_groups,truth_frequency\n";
  for (const auto& r : rep.rows)
    table += detail::csv_row({r.at("replication").get<double>(), r.at("modal_is_truth").get<bool>() ? 1.0 : 0.0,
                              r.at("missed").get<double>(), r.at("false_groups").get<double>(),
                              r.at("truth_frequency").get<double>()});
  rep.tables["selection.csv"] = table;
  rep.wall_seconds = detail::seconds_since(t0);
  return rep;
}

inline int default_support_cap(const SyntheticData& syn, const RateConstants& c) {
  return std::max(1, static_cast<int>(std::lround(c.M2 * syn.rates.s_star)));
}

/// Mixture weights at Sigma0, optionally against a chain and a misspecified
/// covariance.
inline RunReport run_bvm_compare(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep = detail::start_report(c);
  rep.rows = run_replications(c.replications, c.workers, [&](int idx) {
    const auto t = std::chrono::steady_clock::now();
    const std::uint64_t seed = replication_seed(c.seed, static_cast<std::uint64_t>(idx));
    std::mt19937_64 rng(seed);
    const SyntheticData syn = generate_data(c.data, c.hyper, c.rates, rng);
    const int cap = c.bvm.cap ? *c.bvm.cap : default_support_cap(syn, c.rates);
    const MixturePosterior mp = mixture_posterior(syn.data, syn.groups, syn.sigma0, syn.hyper, cap, c.bvm.limit);
    double total = 0.0;
    for (std::size_t i = 0; i < mp.components.size(); ++i) total += mp.weight(i);
    const long truth = mp.find(syn.S0);
    json row{{"replication", idx},
             {"seed", seed},
             {"cap", cap},
             {"components", mp.components.size()},
             {"weight_sum_error", std::abs(total - 1.0)},
             {"weight_truth", truth >= 0 ? mp.weight(static_cast<std::size_t>(truth)) : 0.0},
             {"top_is_truth", mp.components[mp.top()].support == syn.S0},
             {"beta_min_ok", syn.beta_min_ok}};
    if (c.bvm.run_chain) {
      const FitSummary fit = fit_synthetic(syn, detail::seeded(c.sampler, seed), true);
      const ChainComparison cmp = compare_to_chain(mp, fit.supports, fit.betas);
      const MixturePosterior wrong = mixture_posterior(syn.data, syn.groups, c.bvm.misspecification * syn.sigma0,
                                                       syn.hyper, cap, c.bvm.limit);
      const ChainComparison cmp_wrong = compare_to_chain(wrong, fit.supports, fit.betas);
      row["tv"] = cmp.support_tv;
      row["tv_misspecified"] = cmp_wrong.support_tv;
      row["unenumerated_mass"] = cmp.unenumerated_mass;
      row["mean_discrepancy"] = cmp.mean_discrepancy;
      row["sd_discrepancy"] = cmp.sd_discrepancy;
      row["diagnostics"] = fit.diagnostics.to_json();
    }
    row["seconds"] = detail::seconds_since(t);
    return row;
  });
  rep.keys = {{"weight_truth", ""}, {"top_is_truth", ""}, {"weight_sum_error", ""}};
  if (c.bvm.run_chain) {
    rep.keys.push_back({"tv", ""});
    rep.keys.push_back({"tv_misspecified", ""});
  }
  rep.aggregate_all();
  long above = 0;
  double max_sum_error = 0.0;
  for (const auto& r : rep.rows) {
    above += r.at("weight_truth").get<double>() > 0.9 ? 1 : 0;
    max_sum_error = std::max(max_sum_error, r.at("weight_sum_error").get<double>());
  }
  rep.summary = {{"weight_truth_above_0_9", above},
                 {"replications", c.replications},
                 {"max_weight_sum_error", max_sum_error}};
  std::string table = c.bvm.run_chain ? "replication,weight_truth,tv,tv_misspecified\n" : "replication,weight_truth\n";
  for (const auto& r : rep.rows) {
    std::vector<double> xs{r.at("replication").get<double>(), r.at("weight_truth").get<double>()};
    if (c.bvm.run_chain) {
      xs.push_back(r.at("tv").get<double>());
      xs.push_back(r.at("tv_misspecified").get<double>());
    }
    table += detail::csv_row(xs);
  }
  rep.tables["bvm_compare.csv"] = table;
  rep.wall_seconds = detail::seconds_since(t0);
  return rep;
}

// -- prior checks -----------------------------------------------------------

/// Importance-sampling estimate of the slab's total mass with a product
/// Laplace proposal of rate 0.7 lambda / sqrt(m); the weight is bounded.
template <class Rng>
std::pair<double, double> slab_mass_estimate(int m, double lambda, long samples, Rng& rng) {
  const double mu = 0.7 * lambda / std::sqrt(static_cast<double>(m));
  std::exponential_distribution<double> ex(mu);
  std::bernoulli_distribution sign(0.5);
  const double log_c = m * (std::log(lambda) - log_slab_norm_const(m));
  const double log_q0 = m * std::log(0.5 * mu);
  double sum = 0.0, sum2 = 0.0;
  Vector b(m);
  for (long t = 0; t < samples; ++t) {
    double l1 = 0.0;
    for (int i = 0; i < m; ++i) {
      const double e = ex(rng);
      b(i) = sign(rng) ? e : -e;
      l1 += e;
    }
    const double w = std::exp(log_c - lambda * b.norm() - log_q0 + mu * l1);
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / samples;
  const double se = std::sqrt(std::max(0.0, sum2 / samples - mean * mean) / samples);
  return {mean, se};
}

inline RunReport run_prior_checks(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep = detail::start_report(c);
  const PriorCheckSpec& pc = c.prior_checks;
  std::mt19937_64 rng(replication_seed(c.seed, 0));
  auto add = [&](std::string check, json params, double statistic, double threshold, bool pass) {
    rep.rows.push_back({{"check", std::move(check)},
                        {"params", std::move(params)},
                        {"statistic", statistic},
                        {"threshold", threshold},
                        {"pass", pass}});
  };

  add("slab_constant_a1", {{"m", 1}}, std::abs(slab_norm_const(1) - 2.0), 1e-10,
      std::abs(slab_norm_const(1) - 2.0) <= 1e-10);
  const double a2_err = std::abs(slab_norm_const(2) - std::sqrt(2.0 * std::numbers::pi));
  add("slab_constant_a2", {{"m", 2}}, a2_err, 1e-10, a2_err <= 1e-10);

  for (int m : {1, 2, 3})
    for (double lambda : {0.5, 1.0, 2.0}) {
      const auto [mass, se] = slab_mass_estimate(m, lambda, pc.slab_samples, rng);
      add("slab_normalization", {{"m", m}, {"lambda", lambda}, {"se", se}}, std::abs(mass - 1.0), pc.slab_tolerance,
          std::abs(mass - 1.0) <= pc.slab_tolerance);
    }

  for (int m : {1, 2, 5}) {
    const double lambda = 1.0;
    std::vector<double> r(static_cast<std::size_t>(pc.radius_samples));
    for (auto& x : r) x = sample_slab_block(m, lambda, rng).norm();
    const double D = stats::ks_statistic(r, [&](double x) { return stats::gamma_cdf(x, m, lambda); });
    const double crit = stats::ks_critical(r.size(), pc.alpha);
    add("radius_gamma_ks", {{"m", m}, {"lambda", lambda}}, D, crit, D <= crit);
  }

  {
    std::vector<double> x(static_cast<std::size_t>(pc.ig_samples));
    for (auto& v : x) v = sample_inverse_gaussian(c.hyper.ig_mean, c.hyper.ig_shape, rng);
    const double D = stats::ks_statistic(
        x, [&](double v) { return stats::inverse_gaussian_cdf(v, c.hyper.ig_mean, c.hyper.ig_shape); });
    const double crit = stats::ks_critical(x.size(), pc.alpha);
    add("inverse_gaussian_ks", {{"mu", c.hyper.ig_mean}, {"shape", c.hyper.ig_shape}}, D, crit, D <= crit);
  }

  {
    // a Haar column is uniform on the sphere: P_11^2 ~ Beta(1/2, (d-1)/2)
    const int d = 3;
    std::vector<double> x(static_cast<std::size_t>(pc.haar_samples));
    for (auto& v : x) {
      const Matrix P = sample_haar_orthogonal(d, rng);
      v = P(0, 0) * P(0, 0);
    }
    const double D = stats::ks_statistic(x, [&](double v) {
      return v <= 0.0 ? 0.0 : v >= 1.0 ? 1.0 : boost::math::ibeta(0.5, 0.5 * (d - 1), v);
    });
    const double crit = stats::ks_critical(x.size(), pc.alpha);
    add("haar_entry_beta_ks", {{"d", d}}, D, crit, D <= crit);
  }

  {
    // prior-only chain: no rows, G = 3, d = 1
    const GroupStructure g = GroupStructure::uniform(3, 1);
    const Dataset empty(Matrix(0, g.p()), Matrix(0, 1));
    HyperParams hp;
    hp.lambda = Vector::Constant(1, 1.0);
    hp.ig_mean = c.hyper.ig_mean;
    hp.ig_shape = c.hyper.ig_shape;
    const Posterior post(empty, g, hp);
    SamplerConfig sc = c.sampler;
    sc.covariance_mode = CovarianceMode::eigen;
    sc.iterations = pc.chain_iterations;
    sc.burn_in = std::max<long>(sc.burn_in, 1000);
    sc.thin = 1;
    sc.seed = chain_seed(replication_seed(c.seed, 1));
    std::vector<double> counts(4, 0.0), eig;
    long t = 0;
    run_chain(post, sc, [&](const ChainState& st) {
      counts[static_cast<std::size_t>(st.support().s())] += 1.0;
      if (t++ % pc.chain_thin == 0) eig.push_back(st.sigma.D()(0));
    });
    const DimensionPrior prior(3, 1, 0, 1, hp.dim_exponent);
    double tv = 0.0;
    for (int s = 0; s <= 3; ++s)
      tv += 0.5 * std::abs(counts[static_cast<std::size_t>(s)] / static_cast<double>(pc.chain_iterations) -
                           std::exp(prior.log_pmf(s)));
    add("prior_chain_dimension_tv", {{"G", 3}, {"d", 1}, {"iterations", pc.chain_iterations}}, tv, pc.tv_tolerance,
        tv <= pc.tv_tolerance);
    const double D =
        stats::ks_statistic(eig, [&](double v) { return stats::inverse_gaussian_cdf(v, hp.ig_mean, hp.ig_shape); });
    const double crit = stats::ks_critical(eig.size(), pc.alpha);
    add("prior_chain_eigenvalue_ks", {{"thin", pc.chain_thin}, {"samples", eig.size()}}, D, crit, D <= crit);
  }

  rep.keys = {{"pass", ""}};
  rep.aggregate_all();
  bool all = true;
  for (const auto& r : rep.rows) all = all && r.at("pass").get<bool>();
  rep.summary = {{"all_pass", all}, {"checks", rep.rows.size()}};
  std::string table = "check,statistic,threshold,pass\n";
  for (const auto& r : rep.rows) {
    std::ostringstream os;
    os << std::setprecision(17) << r.at("check").get<std::string>() << ',' << r.at("statistic").get<double>() << ','
       << r.at("threshold").get<double>() << ',' << (r.at("pass").get<bool>() ? 1 : 0) << '\n';
    table += os.str();
  }
  rep.tables["prior_checks.csv"] = table;
  rep.wall_seconds = detail::seconds_since(t0);
  return rep;
}

// -- Wishart tails ----------------------------------------------------------

/// Thresholds for one case; the interval anchors come from a pilot run so
/// that the interval event has non-negligible probability.
template <class Rng>
WishartTailConfig wishart_case_config(const WishartCase& wc, const WishartSpec& spec, Rng& rng) {
  WishartTailConfig cfg;
  cfg.dof = wc.dof;
  cfg.psi = Matrix::Identity(wc.d, wc.d);
  cfg.t1 = spec.t1_factor * wc.dof * wc.d;
  const double edge = std::sqrt(static_cast<double>(wc.dof)) - std::sqrt(static_cast<double>(wc.d));
  cfg.t2 = std::max(1e-6, spec.t2_factor * edge * edge);
  cfg.t3 = spec.t3;
  std::vector<std::vector<double>> eigs(static_cast<std::size_t>(wc.d));
  for (int t = 0; t < spec.pilot_draws; ++t) {
    const Matrix W = sample_wishart(static_cast<double>(wc.dof), cfg.psi, rng);
    const Vector rho = Eigen::SelfAdjointEigenSolver<Matrix>(W, Eigen::EigenvaluesOnly).eigenvalues();
    for (int k = 0; k < wc.d; ++k) eigs[static_cast<std::size_t>(k)].push_back(rho(k));
  }
  cfg.a = Vector(wc.d);
  for (int k = 0; k < wc.d; ++k)
    cfg.a(k) = stats::quantile(eigs[static_cast<std::size_t>(k)], 0.5) / std::sqrt(1.0 + spec.t3);
  for (int k = 1; k < wc.d; ++k) cfg.a(k) = std::max(cfg.a(k), cfg.a(k - 1));
  return cfg;
}

inline json to_json(const WishartTailReport& r) {
  return {{"dof", r.config.dof},
          {"d", r.config.psi.rows()},
          {"t1", r.config.t1},
          {"t2", r.config.t2},
          {"t3", r.config.t3},
          {"a", std::vector<double>(r.config.a.data(), r.config.a.data() + r.config.a.size())},
          {"log_upper_largest", r.log_upper_largest},
          {"log_upper_smallest", r.log_upper_smallest},
          {"log_lower_interval", r.log_lower_interval},
          {"upper_largest", r.upper_largest},
          {"upper_smallest", r.upper_smallest},
          {"lower_interval", r.lower_interval},
          {"empirical_largest", r.empirical_largest},
          {"empirical_smallest", r.empirical_smallest},
          {"empirical_interval", r.empirical_interval},
          {"draws", r.draws},
          {"largest_ok", r.largest_ok()},
          {"smallest_ok", r.smallest_ok()},
          {"interval_ok", r.interval_ok()},
          {"interval_event_probable", r.empirical_interval >= 1e-3}};
}

inline RunReport run_wishart_tails(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep = detail::start_report(c);
  const int cases = static_cast<int>(c.wishart.cases.size());
  rep.rows = run_replications(cases, c.workers, [&](int idx) {
    std::mt19937_64 rng(replication_seed(c.seed, static_cast<std::uint64_t>(idx)));
    const WishartTailConfig cfg = wishart_case_config(c.wishart.cases[static_cast<std::size_t>(idx)], c.wishart, rng);
    return to_json(wishart_tail_bounds(cfg, c.wishart.draws, rng));
  });
  rep.keys = {{"empirical_largest", ""}, {"empirical_smallest", ""}, {"empirical_interval", ""}};
  rep.aggregate_all();
  bool all = true;
  std::string table = "dof,d,empirical_largest,upper_largest,empirical_smallest,upper_smallest,empirical_interval,lower_interval\n";
  for (const auto& r : rep.rows) {
    all = all && r.at("largest_ok").get<bool>() && r.at("smallest_ok").get<bool>() && r.at("interval_ok").get<bool>() &&
          r.at("interval_event_probable").get<bool>();
    table += detail::csv_row({r.at("dof").get<double>(), r.at("d").get<double>(), r.at("empirical_largest").get<double>(),
                              r.at("upper_largest").get<double>(), r.at("empirical_smallest").get<double>(),
                              r.at("upper_smallest").get<double>(), r.at("empirical_interval").get<double>(),
                              r.at("lower_interval").get<double>()});
  }
  rep.tables["wishart_tails.csv"] = table;
  rep.summary = {{"all_ok", all}};
  rep.wall_seconds = detail::seconds_since(t0);
  return rep;
}

inline RunReport run_experiment(const ExperimentConfig& c) {
  if (c.experiment == "contraction") return run_contraction(c);
  if (c.experiment == "selection") return run_selection(c);
  if (c.experiment == "bvm-compare") return run_bvm_compare(c);
  if (c.experiment == "prior-checks") return run_prior_checks(c);
  if (c.experiment == "wishart-tails") return run_wishart_tails(c);
  throw DimensionError("unknown experiment '" + c.experiment + "'");
}

}  // namespace mvss::harness
