#pragma once

#include "proflow/data.hpp"
#include "proflow/evaluation.hpp"
#include "proflow/mala.hpp"
#include "proflow/particle_sampler.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifndef PROFLOW_DATA_DIR
#define PROFLOW_DATA_DIR "data"
#endif

namespace proflow {

using Json = nlohmann::json;

struct SamplerSettings {
  double lambda_n = 1.0;
  std::optional<std::size_t> k;
  std::size_t particles = 32;
  std::vector<double> dt{1e-3};
  std::size_t iters = 4000;
  std::optional<std::size_t> burn_in;
  std::optional<std::size_t> subset_batch;
  std::size_t stride = 10;
  std::string init = "prior";  // "prior" or "point"
  std::vector<double> init_point;
  double init_jitter = 0.0;

  bool operator==(const SamplerSettings&) const = default;
};

struct MalaSettings {
  bool enabled = true;
  double dt = 1e-4;
  std::size_t iters = 4000;
  std::size_t warmup = 2000;
  std::optional<double> lambda_n;  // defaults to the sampler's lambda_n
  std::vector<double> init;        // empty: prior mean

  bool operator==(const MalaSettings&) const = default;
};

/**
 * A fully seeded experiment. Optional fields left unset are filled in by
 * resolve_config (kernel lengthscale by the median heuristic, regression
 * sigma by OLS, n from the data file for real datasets).
 */
struct ExperimentConfig {
  std::string experiment;
  std::string dgp;  // normal_location only
  std::size_t n = 1000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
  std::string loss = "mmd";  // mmd | log_di | log_ms
  std::optional<std::size_t> ms_k;
  std::optional<double> sigma;
  std::optional<double> kernel_lengthscale;
  std::size_t mc_samples = 0;  // 0 selects the closed-form kernel estimator
  std::vector<double> prior_mean;
  std::vector<double> prior_scale;
  SamplerSettings sampler;
  MalaSettings mala;
  std::string data_path;
  std::string output_dir;

  bool operator==(const ExperimentConfig&) const = default;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"normal_location", "quadrant_classification", "mixture_regression",
                                              "golf", "penguins"};
  return names;
}

/// Shipped settings for each experiment. `dgp` only applies to normal_location.
inline ExperimentConfig default_config(const std::string& name, const std::string& dgp = "mixture") {
  ExperimentConfig c;
  c.experiment = name;
  c.output_dir = "runs/" + name;
  auto& s = c.sampler;
  auto& m = c.mala;
  if (name == "normal_location") {
    c.dgp = dgp;
    c.n = 1000;
    c.n_test = 1000;
    c.seed = 7;
    c.sigma = 1.0;
    c.prior_mean = {0.0};
    c.prior_scale = {1.0};
    s.lambda_n = 1000.0;
    s.particles = 32;
    s.iters = 4000;
    s.dt = {1e-3};
    m.dt = 1e-3;
    m.iters = 8000;
    m.warmup = 4000;
    c.output_dir += "_" + dgp;
  } else if (name == "quadrant_classification") {
    c.n = 1000;
    c.n_test = 2000;
    c.seed = 11;
    c.loss = "log_di";
    c.prior_mean = {0.0, 0.0};
    c.prior_scale = {5.0, 5.0};
    s.lambda_n = std::sqrt(1000.0);
    s.particles = 64;
    s.iters = 10000;
    s.dt = {5e-2};
    m.dt = 1e-4;
    m.iters = 4000;
    m.warmup = 2000;
  } else if (name == "mixture_regression") {
    c.n = 500;
    c.n_test = 1000;
    c.seed = 3;
    c.sigma = 1.0;
    c.prior_mean = {0.0, 0.0};
    c.prior_scale = {1.0, 1.0};
    s.lambda_n = 500.0;
    s.particles = 16;
    s.iters = 4000;
    s.dt = {5e-3};
    m.dt = 1e-4;
    m.iters = 100000;
    m.warmup = 96000;
  } else if (name == "golf") {
    c.n = 0;
    c.n_test = 0;
    c.seed = 5;
    c.loss = "log_di";
    c.data_path = std::string(PROFLOW_DATA_DIR) + "/golf.csv";
    c.prior_mean = {0.0, 0.0};
    c.prior_scale = {10.0, 10.0};
    s.lambda_n = std::sqrt(5988.0);
    s.particles = 10;
    s.iters = 8000;
    s.dt = {8e-4, 2e-5};
    s.init = "point";
    s.init_point = {2.23, -0.26};
    s.init_jitter = 0.05;
    m.dt = 3e-7;
    m.iters = 8000;
    m.warmup = 4000;
    m.init = {2.23, -0.26};
  } else if (name == "penguins") {
    c.n = 0;
    c.n_test = 0;
    c.seed = 13;
    c.sigma = std::sqrt(0.2);
    c.data_path = std::string(PROFLOW_DATA_DIR) + "/penguins.csv";
    c.prior_mean = {0.0, 0.0};
    c.prior_scale = {1.0, 1.0};
    s.lambda_n = 1000.0;
    s.particles = 32;
    s.iters = 10000;
    s.dt = {1e-3};
    m.dt = 1e-3;
    m.iters = 4000;
    m.warmup = 2000;
  } else {
    throw ConfigError("unknown experiment '" + name +
                      "' (expected normal_location, quadrant_classification, mixture_regression, golf or penguins)");
  }
  return c;
}

namespace detail {

template <class T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
  for (const auto& key : allowed)
    if (!j.contains(key)) throw ConfigError("config: missing key '" + key + "' in " + where);
}

template <class T>
T get(const Json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("config: bad value for '" + key + "' in " + where + ": " + e.what());
  }
}

template <class T>
std::optional<T> get_optional(const Json& j, const std::string& key, const std::string& where) {
  if (j.at(key).is_null()) return std::nullopt;
  return get<T>(j, key, where);
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  const auto& s = c.sampler;
  const auto& m = c.mala;
  return Json{
      {"experiment", c.experiment},
      {"dgp", c.dgp},
      {"n", c.n},
      {"n_test", c.n_test},
      {"seed", c.seed},
      {"loss", c.loss},
      {"ms_k", detail::optional_json(c.ms_k)},
      {"model", {{"sigma", detail::optional_json(c.sigma)}}},
      {"kernel", {{"lengthscale", detail::optional_json(c.kernel_lengthscale)}, {"mc_samples", c.mc_samples}}},
      {"prior", {{"mean", c.prior_mean}, {"scale", c.prior_scale}}},
      {"sampler",
       {{"lambda_n", s.lambda_n},
        {"k", detail::optional_json(s.k)},
        {"particles", s.particles},
        {"dt", s.dt},
        {"iters", s.iters},
        {"burn_in", detail::optional_json(s.burn_in)},
        {"subset_batch", detail::optional_json(s.subset_batch)},
        {"stride", s.stride},
        {"init", s.init},
        {"init_point", s.init_point},
        {"init_jitter", s.init_jitter}}},
      {"mala",
       {{"enabled", m.enabled},
        {"dt", m.dt},
        {"iters", m.iters},
        {"warmup", m.warmup},
        {"lambda_n", detail::optional_json(m.lambda_n)},
        {"init", m.init}}},
      {"data_path", c.data_path},
      {"output_dir", c.output_dir},
  };
}

inline std::string render_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

/// Strict parse: every key must be present and no others are accepted.
inline ExperimentConfig config_from_json(const Json& j) {
  using detail::get;
  using detail::get_optional;
  detail::check_keys(j,
                     {"experiment", "dgp", "n", "n_test", "seed", "loss", "ms_k", "model", "kernel", "prior",
                      "sampler", "mala", "data_path", "output_dir"},
                     "config");
  ExperimentConfig c;
  c.experiment = get<std::string>(j, "experiment", "config");
  c.dgp = get<std::string>(j, "dgp", "config");
  c.n = get<std::size_t>(j, "n", "config");
  c.n_test = get<std::size_t>(j, "n_test", "config");
  c.seed = get<std::uint64_t>(j, "seed", "config");
  c.loss = get<std::string>(j, "loss", "config");
  c.ms_k = get_optional<std::size_t>(j, "ms_k", "config");
  c.data_path = get<std::string>(j, "data_path", "config");
  c.output_dir = get<std::string>(j, "output_dir", "config");

  const Json& model = j.at("model");
  detail::check_keys(model, {"sigma"}, "model");
  c.sigma = get_optional<double>(model, "sigma", "model");

  const Json& kernel = j.at("kernel");
  detail::check_keys(kernel, {"lengthscale", "mc_samples"}, "kernel");
  c.kernel_lengthscale = get_optional<double>(kernel, "lengthscale", "kernel");
  c.mc_samples = get<std::size_t>(kernel, "mc_samples", "kernel");

  const Json& prior = j.at("prior");
  detail::check_keys(prior, {"mean", "scale"}, "prior");
  c.prior_mean = get<std::vector<double>>(prior, "mean", "prior");
  c.prior_scale = get<std::vector<double>>(prior, "scale", "prior");

  const Json& s = j.at("sampler");
  detail::check_keys(s,
                     {"lambda_n", "k", "particles", "dt", "iters", "burn_in", "subset_batch", "stride", "init",
                      "init_point", "init_jitter"},
                     "sampler");
  c.sampler.lambda_n = get<double>(s, "lambda_n", "sampler");
  c.sampler.k = get_optional<std::size_t>(s, "k", "sampler");
  c.sampler.particles = get<std::size_t>(s, "particles", "sampler");
  c.sampler.dt = get<std::vector<double>>(s, "dt", "sampler");
  c.sampler.iters = get<std::size_t>(s, "iters", "sampler");
  c.sampler.burn_in = get_optional<std::size_t>(s, "burn_in", "sampler");
  c.sampler.subset_batch = get_optional<std::size_t>(s, "subset_batch", "sampler");
  c.sampler.stride = get<std::size_t>(s, "stride", "sampler");
  c.sampler.init = get<std::string>(s, "init", "sampler");
  c.sampler.init_point = get<std::vector<double>>(s, "init_point", "sampler");
  c.sampler.init_jitter = get<double>(s, "init_jitter", "sampler");

  const Json& m = j.at("mala");
  detail::check_keys(m, {"enabled", "dt", "iters", "warmup", "lambda_n", "init"}, "mala");
  c.mala.enabled = get<bool>(m, "enabled", "mala");
  c.mala.dt = get<double>(m, "dt", "mala");
  c.mala.iters = get<std::size_t>(m, "iters", "mala");
  c.mala.warmup = get<std::size_t>(m, "warmup", "mala");
  c.mala.lambda_n = get_optional<double>(m, "lambda_n", "mala");
  c.mala.init = get<std::vector<double>>(m, "init", "mala");
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Training and held-out data plus the model they are fitted with.
struct ExperimentData {
  TabularDataset train;
  TabularDataset test;  // empty for the real-data experiments
};

inline ExperimentData make_data(const ExperimentConfig& c) {
  ExperimentData d;
  const std::uint64_t test_seed = mix64(c.seed ^ label_of("held-out"));
  const auto& e = c.experiment;
  if (e == "normal_location") {
    d.train = gen_normal_location(c.dgp, c.n, c.seed);
    if (c.n_test) d.test = gen_normal_location(c.dgp, c.n_test, test_seed);
  } else if (e == "quadrant_classification") {
    d.train = gen_quadrant_classification(c.n, c.seed);
    if (c.n_test) d.test = gen_quadrant_classification(c.n_test, test_seed);
  } else if (e == "mixture_regression") {
    d.train = gen_mixture_regression(c.n, c.seed);
    if (c.n_test) d.test = gen_mixture_regression(c.n_test, test_seed);
  } else if (e == "golf") {
    d.train = load_csv_dataset(c.data_path, CsvSchema::Golf);
  } else if (e == "penguins") {
    d.train = load_csv_dataset(c.data_path, CsvSchema::Penguins);
  } else {
    throw ConfigError("unknown experiment '" + e + "'");
  }
  return d;
}

inline ModelSpec make_model(const ExperimentConfig& c) {
  const auto& e = c.experiment;
  auto sigma = [&] {
    if (!c.sigma) throw ConfigError("model sigma is unresolved; call resolve_config first");
    return *c.sigma;
  };
  if (e == "normal_location") return ModelSpec::gaussian_location(sigma());
  if (e == "quadrant_classification") return ModelSpec::logistic_regression(2);
  if (e == "mixture_regression") return ModelSpec::linear_regression(2, sigma());
  if (e == "golf") return ModelSpec::binomial_logit();
  if (e == "penguins") return ModelSpec::iso_gaussian_2d(sigma());
  throw ConfigError("unknown experiment '" + e + "'");
}

inline LossSpec make_loss(const ExperimentConfig& c, const ModelSpec& model) {
  if (c.loss == "mmd") {
    if (!c.kernel_lengthscale) throw ConfigError("kernel lengthscale is unresolved; call resolve_config first");
    KernelEstimator est = ClosedForm{};
    if (c.mc_samples > 0) est = MonteCarlo{c.mc_samples};
    return LossSpec::kernel_tandem(KernelSpec(*c.kernel_lengthscale), est);
  }
  if (c.loss == "log_di") return LossSpec::log_di(model);
  if (c.loss == "log_ms") return LossSpec::log_ms(c.ms_k.value_or(2));
  throw ConfigError("unknown loss '" + c.loss + "' (expected mmd, log_di or log_ms)");
}

/// Per-parameter loss whose Gibbs posterior is the matched baseline.
inline LossSpec gibbs_loss(const ExperimentConfig& c, const LossSpec& pro_loss) {
  if (c.loss == "mmd") {
    const auto& t = std::get<LossSpec::KernelTandem>(pro_loss.variant());
    return LossSpec::kernel_gibbs(t.kernel, t.estimator);
  }
  return LossSpec::log_score();
}

/**
 * Fills every data-dependent default: n for file-backed datasets, OLS sigma
 * for regression when unset, and the median-heuristic kernel lengthscale.
 */
inline ExperimentConfig resolve_config(ExperimentConfig c, const ExperimentData& data) {
  if (c.experiment == "golf" || c.experiment == "penguins") {
    c.n = data.train.size();
    c.n_test = 0;
  }
  if (c.experiment == "mixture_regression" && !c.sigma) c.sigma = ols_sigma(data.train.rows);
  if (c.loss == "mmd" && !c.kernel_lengthscale) c.kernel_lengthscale = median_heuristic(data.train.rows).lengthscale;
  if (c.loss == "log_ms" && !c.ms_k) c.ms_k = 2;
  // exhaustive pairing over 64 particles is too slow for the MS loss here
  if (c.experiment == "quadrant_classification" && c.loss == "log_ms" && !c.sampler.subset_batch)
    c.sampler.subset_batch = 8;
  if (!c.mala.lambda_n) c.mala.lambda_n = c.sampler.lambda_n;
  return c;
}

inline SamplerConfig sampler_config(const ExperimentConfig& c, const ModelSpec& model, std::size_t threads) {
  SamplerConfig s;
  s.lambda_n = c.sampler.lambda_n;
  s.k = c.sampler.k;
  s.particles = c.sampler.particles;
  s.dt = to_vector(c.sampler.dt);
  s.iters = c.sampler.iters;
  s.burn_in = c.sampler.burn_in;
  s.subset_batch = c.sampler.subset_batch;
  s.stride = c.sampler.stride;
  s.seed = c.seed;
  s.prior = GaussianPrior{to_vector(c.prior_mean), to_vector(c.prior_scale)};
  s.prior.validate(model.dim());
  if (c.sampler.init == "prior")
    s.init = InitFromPrior{};
  else if (c.sampler.init == "point")
    s.init = InitAtPoint{to_vector(c.sampler.init_point), c.sampler.init_jitter};
  else
    throw ConfigError("sampler init must be 'prior' or 'point'");
  s.threads = threads;
  return s;
}

inline MalaConfig mala_config(const ExperimentConfig& c) {
  MalaConfig m;
  m.dt = c.mala.dt;
  m.iters = c.mala.iters;
  m.warmup = c.mala.warmup;
  m.seed = c.seed;
  m.lambda_n = c.mala.lambda_n.value_or(c.sampler.lambda_n);
  m.prior = GaussianPrior{to_vector(c.prior_mean), to_vector(c.prior_scale)};
  m.init = to_vector(c.mala.init);
  return m;
}

/// Mode centres reported in metrics for each experiment.
inline std::vector<std::pair<Vector, double>> reported_modes(const ExperimentConfig& c) {
  std::vector<std::pair<Vector, double>> modes;
  auto one = [](double v) { return Vector::Constant(1, v); };
  if (c.experiment == "normal_location") {
    if (c.dgp == "mixture") modes = {{one(-2.0), 0.75}, {one(2.0), 0.75}};
    if (c.dgp == "claw") modes = {{one(-2.0), 0.75}, {one(0.0), 0.75}, {one(2.0), 0.75}};
    if (c.dgp == "well_specified" || c.dgp == "heavy_tails") modes = {{one(0.0), 0.5}};
  } else if (c.experiment == "mixture_regression") {
    Vector up(2), down(2);
    up << 0.0, 2.0;
    down << 0.0, -2.0;
    modes = {{up, 0.5}, {down, 0.5}};
  }
  return modes;
}

inline void write_atoms_csv(const std::string& path, const Matrix& atoms) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "atom_index";
  for (Eigen::Index d = 0; d < atoms.cols(); ++d) out << ",dim_" << d;
  out << '\n';
  for (Eigen::Index i = 0; i < atoms.rows(); ++i) {
    out << i;
    for (Eigen::Index d = 0; d < atoms.cols(); ++d) out << ',' << format_double(atoms(i, d));
    out << '\n';
  }
}

inline void write_trajectory_csv(const std::string& path, const TrajectoryLog& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const auto dim = log.snapshots.empty() ? 0 : log.snapshots.front().cols();
  out << "iter,particle";
  for (Eigen::Index d = 0; d < dim; ++d) out << ",dim_" << d;
  out << '\n';
  for (std::size_t s = 0; s < log.snapshots.size(); ++s) {
    const Matrix& m = log.snapshots[s];
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
      out << log.snapshot_steps[s] << ',' << j;
      for (Eigen::Index d = 0; d < dim; ++d) out << ',' << format_double(m(j, d));
      out << '\n';
    }
  }
}

/// Reads a posterior CSV (`atom_index,dim_0..`) back into atoms.
inline PosteriorApprox read_posterior_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open posterior '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("posterior '" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "atom_index")
    throw ConfigError("posterior '" + path + "' must start with atom_index,dim_0,...");
  for (std::size_t d = 1; d < header.size(); ++d)
    if (header[d] != "dim_" + std::to_string(d - 1))
      throw ConfigError("posterior '" + path + "': unexpected column '" + header[d] + "'");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ConfigError("posterior '" + path + "' line " + std::to_string(lineno) + ": wrong number of cells");
    std::vector<double> row(header.size() - 1);
    for (std::size_t d = 1; d < cells.size(); ++d)
      if (!detail::parse_number(cells[d], row[d - 1]))
        throw ConfigError("posterior '" + path + "' line " + std::to_string(lineno) + ": bad value '" + cells[d] + "'");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("posterior '" + path + "' has no atoms");
  PosteriorApprox p;
  p.atoms.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < rows[i].size(); ++d)
      p.atoms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
  return p;
}

inline Json summary_json(const PosteriorSummary& s) {
  Json modes = Json::array();
  for (const auto& m : s.mode_masses)
    modes.push_back({{"center", to_std(m.center)}, {"radius", m.radius}, {"fraction", m.fraction}});
  return {{"posterior_mean", to_std(s.mean)},
          {"posterior_sd", to_std(s.marginal_sd)},
          {"spread", to_std(s.spread)},
          {"mode_masses", modes}};
}

/**
 * Predictive summaries on a regular grid, for plotting without redoing any
 * inference. Columns depend on the model:
 *  - LogisticRegression: `x_0,x_1,prob` on a 50 x 50 grid over [-2, 2]^2
 *  - IsoGaussian2D: `y_0,y_1,density` on a 50 x 50 grid over the padded data range
 *  - GaussianLocation: `y,density` at 200 points over the padded data range
 *  - BinomialLogit: `distance,mean,q05,q95` of the success probability at 100 distances
 */
inline void write_predictive_grid(const std::string& path, const PosteriorApprox& posterior, const ModelSpec& model,
                                  std::span<const Observation> rows) {
  if (posterior.size() == 0) throw ConfigError("predictive grid: empty posterior");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  auto range = [&](Eigen::Index coord, bool covariate) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& o : rows) {
      const double v = covariate ? o.covariate[coord] : o.response[coord];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (rows.empty()) lo = -3.0, hi = 3.0;
    const double pad = 0.1 * std::max(hi - lo, 1.0);
    return std::pair{lo - pad, hi + pad};
  };
  auto mixture_density = [&](const Observation& o) { return std::exp(lppd_point(posterior, model, o)); };
  switch (model.variant().index()) {
    case 3: {
      if (model.dim() != 2) throw ConfigError("predictive grid needs 2 covariates for LogisticRegression");
      out << "x_0,x_1,prob\n";
      for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
          Vector x(2);
          x << -2.0 + 4.0 * i / 49.0, -2.0 + 4.0 * j / 49.0;
          const double p = mixture_density(Observation::label(x, 1));
          out << format_double(x[0]) << ',' << format_double(x[1]) << ',' << format_double(p) << '\n';
        }
      break;
    }
    case 1: {
      const auto [lo0, hi0] = range(0, false);
      const auto [lo1, hi1] = range(1, false);
      out << "y_0,y_1,density\n";
      for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
          Vector y(2);
          y << lo0 + (hi0 - lo0) * i / 49.0, lo1 + (hi1 - lo1) * j / 49.0;
          out << format_double(y[0]) << ',' << format_double(y[1]) << ','
              << format_double(mixture_density(Observation::point(y))) << '\n';
        }
      break;
    }
    case 0: {
      const auto [lo, hi] = range(0, false);
      out << "y,density\n";
      for (int i = 0; i < 200; ++i) {
        const double y = lo + (hi - lo) * i / 199.0;
        out << format_double(y) << ',' << format_double(mixture_density(Observation::value(y))) << '\n';
      }
      break;
    }
    case 4: {
      const double hi = rows.empty() ? 20.0 : range(0, true).second;
      out << "distance,mean,q05,q95\n";
      std::vector<double> probs(posterior.size());
      for (int i = 0; i < 100; ++i) {
        const double d = hi * i / 99.0;
        for (std::size_t s = 0; s < posterior.size(); ++s)
          probs[s] = sigmoid(posterior.atoms(static_cast<Eigen::Index>(s), 0) +
                             posterior.atoms(static_cast<Eigen::Index>(s), 1) * d);
        std::sort(probs.begin(), probs.end());
        const double mean = std::accumulate(probs.begin(), probs.end(), 0.0) / static_cast<double>(probs.size());
        auto q = [&](double level) {
          return probs[static_cast<std::size_t>(std::floor(level * static_cast<double>(probs.size() - 1)))];
        };
        out << format_double(d) << ',' << format_double(mean) << ',' << format_double(q(0.05)) << ','
            << format_double(q(0.95)) << '\n';
      }
      break;
    }
    default:
      throw ConfigError("no predictive grid is defined for " + model.name());
  }
}

struct ExperimentResult {
  ExperimentConfig config;  // resolved
  PosteriorApprox pro;
  std::optional<PosteriorApprox> gibbs;
  Json metrics;
};

/**
 * Runs one experiment end to end and writes config.json, data.csv,
 * test.csv (synthetic experiments), posterior_pro.csv, posterior_gibbs.csv
 * (when MALA is enabled), trajectory_pro.csv and metrics.json into
 * config.output_dir. `threads` only affects speed.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& raw, std::size_t threads = 1) {
  const auto start = std::chrono::steady_clock::now();
  auto stage = [](const std::string& name, auto&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const Error& e) {
      throw std::runtime_error("stage '" + name + "' failed: " + e.what());
    }
  };

  const ExperimentData data = stage("data", [&] { return make_data(raw); });
  ExperimentResult res;
  res.config = stage("config", [&] { return resolve_config(raw, data); });
  const ExperimentConfig& c = res.config;
  const ModelSpec model = stage("model", [&] { return make_model(c); });
  const LossSpec loss = stage("loss", [&] { return make_loss(c, model); });

  namespace fs = std::filesystem;
  const fs::path dir = c.output_dir.empty() ? fs::path(".") : fs::path(c.output_dir);
  stage("output", [&] {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    std::ofstream(dir / "config.json") << render_config(c);
    write_dataset_csv((dir / "data.csv").string(), data.train.rows);
    if (!data.test.rows.empty()) write_dataset_csv((dir / "test.csv").string(), data.test.rows);
    return 0;
  });

  const auto wgf = stage("particle_sampler", [&] {
    return run_wgf(sampler_config(c, model, threads), loss, model, data.train.rows);
  });
  res.pro = wgf.posterior;
  stage("output", [&] {
    write_atoms_csv((dir / "posterior_pro.csv").string(), wgf.posterior.atoms);
    write_trajectory_csv((dir / "trajectory_pro.csv").string(), wgf.trajectory);
    return 0;
  });

  std::optional<MalaResult> chain;
  if (c.mala.enabled) {
    chain = stage("gibbs_mala", [&] {
      const MalaConfig mc = mala_config(c);
      GibbsTarget target(model, gibbs_loss(c, loss), data.train.rows, mc.lambda_n, mc.prior);
      return run_mala(mc, target);
    });
    res.gibbs = chain->posterior;
    stage("output", [&] {
      write_atoms_csv((dir / "posterior_gibbs.csv").string(), chain->posterior.atoms);
      return 0;
    });
  }

  // real-data experiments have no held-out split, so their elpd is in-sample
  const auto& eval_rows = data.test.rows.empty() ? data.train.rows : data.test.rows;
  Json metrics = stage("evaluation", [&] {
    const auto modes = reported_modes(c);
    const PredictiveReport pro_report = elpd(res.pro, model, eval_rows, threads);
    const PosteriorSummary pro_summary = summarize(res.pro, modes);
    Json m = summary_json(pro_summary);
    m["experiment"] = c.experiment;
    m["seed"] = c.seed;
    m["elpd_data"] = data.test.rows.empty() ? "train" : "test";
    m["elpd"] = pro_report.elpd;
    m["elpd_pro"] = pro_report.elpd;
    m["lppd_mean"] = pro_report.elpd / static_cast<double>(pro_report.n_test);
    m["zero_density_points"] = pro_report.zero_density.size();
    if (chain) {
      const PredictiveReport g = elpd(*res.gibbs, model, eval_rows, threads);
      Json gj = summary_json(summarize(*res.gibbs, modes));
      gj["elpd"] = g.elpd;
      gj["lppd_mean"] = g.elpd / static_cast<double>(g.n_test);
      gj["acceptance_rate"] = chain->diagnostics.acceptance_rate;
      gj["kept_samples"] = chain->diagnostics.kept_samples;
      m["gibbs"] = gj;
      m["elpd_gibbs"] = g.elpd;
      m["acceptance_rate"] = chain->diagnostics.acceptance_rate;
    }
    if (c.experiment == "mixture_regression") m["reference_elpd"] = {{"pro", -1834.68}, {"gibbs", -3593.67}};
    if (c.experiment == "golf") {
      const Vector slope = res.pro.atoms.col(1);
      const auto b = bimodality(std::span<const double>(slope.data(), static_cast<std::size_t>(slope.size())));
      m["slope_bimodality"] = {{"found", b.found},
                               {"mass_low", b.mass_low},
                               {"mass_high", b.mass_high},
                               {"trough_ratio", b.trough_ratio}};
    }
    const double mean_inter =
        wgf.trajectory.mean_interaction_grad_norm.empty() ? 0.0 : wgf.trajectory.mean_interaction_grad_norm.back();
    m["final_mean_interaction_grad_norm"] = mean_inter;
    m["final_mean_prior_grad_norm"] =
        wgf.trajectory.mean_prior_grad_norm.empty() ? 0.0 : wgf.trajectory.mean_prior_grad_norm.back();
    return m;
  });
  metrics["runtime_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stage("output", [&] {
    std::ofstream(dir / "metrics.json") << metrics.dump(2) << "\n";
    return 0;
  });
  res.metrics = std::move(metrics);
  return res;
}

}  // namespace proflow
