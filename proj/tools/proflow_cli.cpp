#include "proflow/checks.hpp"
#include "proflow/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

using namespace proflow;

namespace {

int print_checks(const std::vector<checks::CheckLine>& lines) {
  bool ok = true;
  for (const auto& l : lines) {
    std::printf("%-4s %-70s %.3e (tol %.1e)\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.value, l.tolerance);
    ok = ok && l.pass;
  }
  return ok ? 0 : 1;
}

ModelSpec model_for_eval(const std::string& config_path) {
  const ExperimentConfig raw = load_config(config_path);
  ExperimentConfig c = raw;
  // a resolved config echo carries sigma already; fall back to the data otherwise
  if (!c.sigma && (c.experiment == "mixture_regression")) c = resolve_config(c, make_data(c));
  return make_model(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"proflow: predictively oriented posteriors by interacting particles"};
  app.require_subcommand(1);

  auto* exp = app.add_subcommand("experiment", "run one experiment and write its artifacts");
  std::string name, dgp = "mixture", loss, out, config_path;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  exp->add_option("name", name, "normal_location | quadrant_classification | mixture_regression | golf | penguins");
  exp->add_option("--dgp", dgp, "normal_location data-generating process");
  exp->add_option("--n", n, "training sample size");
  exp->add_option("--seed", seed, "master seed");
  exp->add_option("--loss", loss, "mmd | log_di | log_ms");
  exp->add_option("--out", out, "output directory");
  exp->add_option("--config", config_path, "JSON config (flags override its fields)");
  exp->add_option("--threads", threads, "worker threads (results do not depend on this)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  std::uint64_t check_seed = 1;
  std::size_t points = 20;
  grad->add_option("--seed", check_seed);
  grad->add_option("--points", points, "random points per variant");

  auto* oracle = app.add_subcommand("oracle-check", "scoring identities and kernel embeddings against oracles");
  oracle->add_option("--seed", check_seed);

  auto* eval = app.add_subcommand("eval", "held-out predictive evaluation of a posterior CSV");
  std::string posterior_path, test_path, eval_config, grid_path;
  eval->add_option("--posterior", posterior_path)->required();
  eval->add_option("--test", test_path)->required();
  eval->add_option("--config", eval_config, "experiment config (default: config.json next to the posterior)");
  eval->add_option("--grid", grid_path, "also write a predictive grid CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*exp) {
      ExperimentConfig c;
      if (!config_path.empty()) {
        c = load_config(config_path);
        if (!name.empty() && name != c.experiment)
          throw ConfigError("experiment name '" + name + "' does not match config '" + c.experiment + "'");
      } else {
        if (name.empty()) throw ConfigError("experiment name is required");
        c = default_config(name, dgp);
      }
      if (exp->count("--dgp") && c.experiment == "normal_location") c.dgp = dgp;
      if (n) c.n = *n;
      if (seed) c.seed = *seed;
      if (!loss.empty()) c.loss = loss;
      if (!out.empty()) c.output_dir = out;
      const auto res = run_experiment(c, threads);
      std::cout << "wrote " << res.config.output_dir << "\n";
      std::cout << "elpd (" << res.metrics.at("elpd_data").get<std::string>() << ") PrO " << res.metrics.at("elpd_pro");
      if (res.metrics.contains("elpd_gibbs")) std::cout << "  Gibbs " << res.metrics.at("elpd_gibbs");
      std::cout << "\n";
      if (res.metrics.at("zero_density_points").get<std::size_t>() > 0)
        std::cerr << "warning: some evaluation points have zero predictive density (lppd = -inf)\n";
      return 0;
    }
    if (*grad) return print_checks(checks::gradient_suite(check_seed, points));
    if (*oracle) return print_checks(checks::oracle_suite(check_seed));
    if (*eval) {
      if (eval_config.empty())
        eval_config = (std::filesystem::path(posterior_path).parent_path() / "config.json").string();
      const ModelSpec model = model_for_eval(eval_config);
      const PosteriorApprox posterior = read_posterior_csv(posterior_path);
      if (posterior.dim() != model.dim()) throw ConfigError("posterior dimension does not match the model");
      const TabularDataset test = load_csv_dataset(test_path, CsvSchema::Generic);
      const PredictiveReport r = elpd(posterior, model, test.rows);
      Json j{{"elpd", r.elpd},
             {"lppd_mean", r.elpd / static_cast<double>(r.n_test)},
             {"n_test", r.n_test},
             {"zero_density_points", r.zero_density}};
      std::cout << j.dump(2) << "\n";
      if (!r.zero_density.empty()) std::cerr << "warning: " << r.zero_density.size() << " points with lppd = -inf\n";
      if (!grid_path.empty()) write_predictive_grid(grid_path, posterior, model, test.rows);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
