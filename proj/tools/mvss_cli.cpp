#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mvss/harness.hpp"

namespace fs = std::filesystem;
using namespace mvss;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed, overrides the config");
  app->add_option("--out", c.out, "output directory, overrides the config");
  app->add_option("--workers", c.workers, "concurrent replications, overrides the config")->check(CLI::PositiveNumber);
}

harness::ExperimentConfig load_config(const Common& c, const std::string& experiment) {
  harness::ExperimentConfig cfg;
  if (c.config.empty()) {
    cfg = harness::default_config(experiment.empty() ? "contraction" : experiment);
    if (experiment.empty()) {
      cfg.scenario = "standard";
      cfg.data = harness::DataSpec{};
    }
  } else {
    json j = io::read_json(c.config);
    if (!j.contains("experiment") && !experiment.empty()) j["experiment"] = experiment;
    cfg = harness::config_from_json(j);
  }
  if (!experiment.empty()) cfg.experiment = experiment;
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  return cfg;
}

int cmd_generate(const Common& c) {
  const auto cfg = load_config(c, "");
  std::mt19937_64 rng(harness::replication_seed(cfg.seed, 0));
  const auto syn = harness::generate_data(cfg.data, cfg.hyper, cfg.rates, rng);
  harness::save_synthetic(cfg.output_dir, syn);
  std::cout << syn.summary().dump(2) << '\n';
  return 0;
}

int cmd_fit(const Common& c, const std::string& data_dir, const std::string& sigma_file) {
  const auto cfg = load_config(c, "");
  const auto [data, groups] = io::load_dataset(io::DataFiles::in(data_dir));
  const HyperParams hp = cfg.hyper.build(data.X, groups, data.d());
  SamplerConfig sc = cfg.sampler;
  if (c.seed) sc.seed = *c.seed;
  if (!sigma_file.empty()) sc.initial_sigma = io::read_matrix_csv(fs::path(sigma_file));
  if (sc.covariance_mode == CovarianceMode::fixed && !sc.initial_sigma)
    throw DimensionError("fit: fixed covariance mode needs --sigma0");
  const Posterior post(data, groups, hp);
  fs::create_directories(cfg.output_dir);
  std::ofstream chain(fs::path(cfg.output_dir) / "chain.jsonl");
  const auto diag = run_chain(post, sc, [&](const ChainState& st) { chain << sample_record(st, groups).dump() << '\n'; });
  json summary = diag.to_json();
  summary["modal_support"] = harness::detail::support_json(diag.modal_support());
  summary["lambda"] = std::vector<double>(hp.lambda.data(), hp.lambda.data() + hp.lambda.size());
  summary["sampler"] = harness::to_json(sc);
  io::write_json(fs::path(cfg.output_dir) / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_bvm(const Common& c, const std::string& data_dir, const std::string& sigma_file, std::optional<int> cap) {
  const auto cfg = load_config(c, "");
  const auto [data, groups] = io::load_dataset(io::DataFiles::in(data_dir));
  const Matrix sigma0 = io::read_matrix_csv(fs::path(sigma_file));
  if (sigma0.rows() != data.d() || sigma0.cols() != data.d())
    throw DimensionError("bvm: Sigma0 is " + std::to_string(sigma0.rows()) + "x" + std::to_string(sigma0.cols()) +
                         " but Y has " + std::to_string(data.d()) + " columns");
  const HyperParams hp = cfg.hyper.build(data.X, groups, data.d());
  int use_cap = 0;
  if (cap) {
    use_cap = *cap;
  } else if (cfg.bvm.cap) {
    use_cap = *cfg.bvm.cap;
  } else {
    const double s_star = dimension_threshold(data.n(), groups.G(), data.d(), groups.p_max(), cfg.data.s0);
    use_cap = std::max(1, static_cast<int>(std::lround(cfg.rates.M2 * s_star)));
  }
  const auto mp = mixture_posterior(data, groups, sigma0, hp, use_cap, cfg.bvm.limit);
  io::write_json(fs::path(cfg.output_dir) / "mixture.json", to_json(mp));
  const auto& top = mp.components[mp.top()];
  std::cout << json{{"components", mp.components.size()},
                    {"cap", use_cap},
                    {"top_support", harness::detail::support_json(top.support)},
                    {"top_weight", mp.weight(mp.top())}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_compare(const Common& c, const std::string& mixture_file, const std::string& chain_file) {
  const MixturePosterior mp = mixture_from_json(io::read_json(mixture_file));
  std::vector<SupportIndex> supports;
  std::vector<Matrix> betas;
  for (const auto& rec : io::read_jsonl(chain_file)) {
    const ParsedSample s = parse_sample_record(rec, mp.groups, mp.d);
    supports.push_back(s.support);
    betas.push_back(s.beta);
  }
  const ChainComparison cmp = compare_to_chain(mp, supports, betas);
  const json out{{"support_tv", cmp.support_tv},
                 {"unenumerated_mass", cmp.unenumerated_mass},
                 {"top_support", harness::detail::support_json(mp.components[cmp.top_component].support)},
                 {"top_weight", cmp.top_weight},
                 {"top_chain_frequency", cmp.top_chain_frequency},
                 {"mean_discrepancy", cmp.mean_discrepancy},
                 {"sd_discrepancy", cmp.sd_discrepancy},
                 {"chain_samples", supports.size()}};
  const std::string dir = c.out.empty() ? std::string(".") : c.out;
  io::write_json(fs::path(dir) / "comparison.json", out);
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_experiment(const Common& c, const std::string& name) {
  const auto cfg = load_config(c, name);
  const auto report = harness::run_experiment(cfg);
  report.write(cfg.output_dir);
  std::cout << json{{"experiment", report.experiment},
                    {"summary", report.summary},
                    {"wall_seconds", report.wall_seconds},
                    {"output", cfg.output_dir}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group spike-and-slab multivariate regression: sampler, mixture oracle and experiments"};
  app.require_subcommand(1);

  Common gen_c, fit_c, bvm_c, cmp_c, exp_c;
  auto* gen = app.add_subcommand("generate", "simulate a dataset and write X.csv, Y.csv, groups.txt");
  add_common(gen, gen_c);

  auto* fit = app.add_subcommand("fit", "run the sampler on a dataset directory");
  add_common(fit, fit_c);
  std::string fit_data, fit_sigma;
  fit->add_option("--data", fit_data, "directory with X.csv, Y.csv, groups.txt")->required()->check(CLI::ExistingDirectory);
  fit->add_option("--sigma0", fit_sigma, "covariance CSV: start value, and the fixed value in fixed mode")
      ->check(CLI::ExistingFile);

  auto* bvm = app.add_subcommand("bvm", "Gaussian-mixture approximation at a known covariance");
  add_common(bvm, bvm_c);
  std::string bvm_data, bvm_sigma;
  std::optional<int> bvm_cap;
  bvm->add_option("--data", bvm_data, "directory with X.csv, Y.csv, groups.txt")->required()->check(CLI::ExistingDirectory);
  bvm->add_option("--sigma0", bvm_sigma, "covariance CSV")->required()->check(CLI::ExistingFile);
  bvm->add_option("--cap", bvm_cap, "largest support size enumerated");

  auto* cmp = app.add_subcommand("compare", "compare a chain to a mixture export");
  add_common(cmp, cmp_c);
  std::string cmp_mixture, cmp_chain;
  cmp->add_option("--mixture", cmp_mixture, "mixture.json from bvm")->required()->check(CLI::ExistingFile);
  cmp->add_option("--chain", cmp_chain, "chain.jsonl from fit")->required()->check(CLI::ExistingFile);

  auto* exp = app.add_subcommand("experiment", "run a simulation experiment");
  add_common(exp, exp_c);
  std::string exp_name;
  exp->add_option("name", exp_name, "experiment")
      ->required()
      ->check(CLI::IsMember({"contraction", "selection", "bvm-compare", "prior-checks", "wishart-tails"}));

  auto* schema = app.add_subcommand("schema", "print the configuration JSON schema");
  auto* cfg = app.add_subcommand("config", "print the default configuration of an experiment");
  std::string cfg_name = "contraction";
  cfg->add_option("name", cfg_name, "experiment")
      ->check(CLI::IsMember({"contraction", "selection", "bvm-compare", "prior-checks", "wishart-tails"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_c);
    if (*fit) return cmd_fit(fit_c, fit_data, fit_sigma);
    if (*bvm) return cmd_bvm(bvm_c, bvm_data, bvm_sigma, bvm_cap);
    if (*cmp) return cmd_compare(cmp_c, cmp_mixture, cmp_chain);
    if (*exp) return cmd_experiment(exp_c, exp_name);
    if (*schema) {
      std::cout << harness::config_schema().dump(2) << '\n';
      return 0;
    }
    if (*cfg) {
      std::cout << harness::to_json(harness::default_config(cfg_name)).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
