#pragma once

#include "proflow/core.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>

namespace proflow {

/// Parameter vector of a model. Construction rejects NaN/Inf entries.
class Theta {
 public:
  Theta() = default;
  explicit Theta(Vector values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw NumericError("Theta: non-finite entry in parameter vector");
  }
  Theta(std::initializer_list<double> values)
      : Theta(Vector(Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size())))) {}

  const Vector& values() const { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

 private:
  Vector values_;
};

struct Counts {
  std::int64_t tries = 0;
  std::int64_t successes = 0;
  friend bool operator==(const Counts&, const Counts&) = default;
};

/**
 * One datum. `response` holds the real response (1 or 2 coordinates) or a
 * 0/1 label; grouped binomial data carry `counts` instead. `covariate` is
 * empty for unconditional models.
 */
struct Observation {
  Vector response;
  std::optional<Counts> counts;
  Vector covariate;

  static Observation value(double y) { return {Vector::Constant(1, y), std::nullopt, Vector()}; }
  static Observation point(Vector y) { return {std::move(y), std::nullopt, Vector()}; }
  static Observation regression(Vector x, double y) {
    return {Vector::Constant(1, y), std::nullopt, std::move(x)};
  }
  static Observation label(Vector x, int y) {
    return {Vector::Constant(1, static_cast<double>(y)), std::nullopt, std::move(x)};
  }
  static Observation grouped(double distance, std::int64_t tries, std::int64_t successes) {
    return {Vector(), Counts{tries, successes}, Vector::Constant(1, distance)};
  }
};

enum class Family { Gaussian, Bernoulli, Binomial };

class ModelSpec {
 public:
  /// y ~ N(theta, sigma^2).
  struct GaussianLocation {
    double sigma = 1.0;
  };
  /// y ~ N(theta, sigma^2 I_2).
  struct IsoGaussian2D {
    double sigma = 1.0;
  };
  /// y | x ~ N(x^T theta, sigma^2).
  struct LinearRegressionGauss {
    std::size_t dim = 1;
    double sigma = 1.0;
  };
  /// y | x ~ Bernoulli(sigmoid(x^T theta)), no intercept.
  struct LogisticRegression {
    std::size_t dim = 2;
  };
  /// successes | distance ~ Binomial(tries, sigmoid(theta_0 + theta_1 * distance)).
  struct BinomialLogit {};

  using Variant = std::variant<GaussianLocation, IsoGaussian2D, LinearRegressionGauss,
                               LogisticRegression, BinomialLogit>;

  static ModelSpec gaussian_location(double sigma) { return ModelSpec(GaussianLocation{sigma}); }
  static ModelSpec iso_gaussian_2d(double sigma) { return ModelSpec(IsoGaussian2D{sigma}); }
  static ModelSpec linear_regression(std::size_t dim, double sigma) {
    return ModelSpec(LinearRegressionGauss{dim, sigma});
  }
  static ModelSpec logistic_regression(std::size_t dim) { return ModelSpec(LogisticRegression{dim}); }
  static ModelSpec binomial_logit() { return ModelSpec(BinomialLogit{}); }

  explicit ModelSpec(Variant v) : v_(v) { validate(); }

  const Variant& variant() const { return v_; }

  std::size_t dim() const {
    return std::visit(
        [](const auto& m) -> std::size_t {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, GaussianLocation>) return 1;
          else if constexpr (std::is_same_v<M, IsoGaussian2D>) return 2;
          else if constexpr (std::is_same_v<M, BinomialLogit>) return 2;
          else return m.dim;
        },
        v_);
  }

  /// Length of the linear predictor / response mean.
  std::size_t response_dim() const { return std::holds_alternative<IsoGaussian2D>(v_) ? 2 : 1; }

  std::size_t covariate_dim() const {
    if (std::holds_alternative<LinearRegressionGauss>(v_) || std::holds_alternative<LogisticRegression>(v_))
      return dim();
    if (std::holds_alternative<BinomialLogit>(v_)) return 1;
    return 0;
  }

  bool conditional() const { return covariate_dim() > 0; }

  Family family() const {
    if (std::holds_alternative<LogisticRegression>(v_)) return Family::Bernoulli;
    if (std::holds_alternative<BinomialLogit>(v_)) return Family::Binomial;
    return Family::Gaussian;
  }

  bool gaussian_response() const { return family() == Family::Gaussian; }

  double sigma() const {
    if (auto* m = std::get_if<GaussianLocation>(&v_)) return m->sigma;
    if (auto* m = std::get_if<IsoGaussian2D>(&v_)) return m->sigma;
    if (auto* m = std::get_if<LinearRegressionGauss>(&v_)) return m->sigma;
    throw ConfigError(name() + " has no Gaussian noise scale");
  }

  ModelSpec with_sigma(double sigma) const {
    Variant v = v_;
    std::visit(
        [sigma](auto& m) {
          if constexpr (requires { m.sigma; }) m.sigma = sigma;
        },
        v);
    return ModelSpec(v);
  }

  std::string name() const {
    static constexpr const char* names[] = {"GaussianLocation", "IsoGaussian2D", "LinearRegressionGauss",
                                            "LogisticRegression", "BinomialLogit"};
    return names[v_.index()];
  }

  /// Upper bound on the density (or per-trial mass) of a single scoring unit.
  double density_sup() const {
    if (!gaussian_response()) return 1.0;
    return std::pow(1.0 / (sigma() * std::sqrt(2.0 * M_PI)), static_cast<double>(response_dim()));
  }

 private:
  void validate() const {
    std::visit(
        [](const auto& m) {
          if constexpr (requires { m.sigma; }) {
            if (!(m.sigma > 0.0) || !std::isfinite(m.sigma))
              throw ConfigError("model sigma must be a positive finite number");
          }
          if constexpr (requires { m.dim; }) {
            if (m.dim < 1) throw ConfigError("model dim must be at least 1");
          }
        },
        v_);
  }

  Variant v_;
};

inline void check_theta(const ModelSpec& model, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != model.dim())
    throw ConfigError(model.name() + ": theta has length " + std::to_string(theta.size()) + ", expected " +
                      std::to_string(model.dim()));
}

inline void check_observation(const ModelSpec& model, const Observation& obs) {
  const auto cdim = static_cast<Eigen::Index>(model.covariate_dim());
  if (obs.covariate.size() != cdim)
    throw ConfigError(model.name() + ": covariate has length " + std::to_string(obs.covariate.size()) +
                      ", expected " + std::to_string(cdim));
  if (model.family() == Family::Binomial) {
    if (!obs.counts) throw ConfigError("BinomialLogit observation needs tries/successes counts");
    if (obs.counts->tries < 0 || obs.counts->successes < 0 || obs.counts->successes > obs.counts->tries)
      throw ConfigError("count observation violates 0 <= successes <= tries");
    return;
  }
  if (obs.counts) throw ConfigError(model.name() + " does not take count observations");
  if (static_cast<std::size_t>(obs.response.size()) != model.response_dim())
    throw ConfigError(model.name() + ": response has wrong length");
  if (model.family() == Family::Bernoulli && obs.response[0] != 0.0 && obs.response[0] != 1.0)
    throw ConfigError("LogisticRegression labels must be 0 or 1");
}

/// Number of scoring units in a dataset: Bernoulli trials for grouped counts,
/// rows otherwise.
inline double effective_count(std::span<const Observation> data) {
  double n = 0.0;
  for (const auto& o : data) n += o.counts ? static_cast<double>(o.counts->tries) : 1.0;
  return n;
}

/// Linear predictor (Gaussian mean or logit). Length 1 except IsoGaussian2D.
struct Predictor {
  std::array<double, 2> eta{};
  std::size_t size = 1;
};

inline Predictor predictor(const ModelSpec& model, const Vector& theta, const Observation& obs) {
  Predictor p;
  switch (model.variant().index()) {
    case 0:
      p.eta[0] = theta[0];
      break;
    case 1:
      p.eta = {theta[0], theta[1]};
      p.size = 2;
      break;
    case 2:
    case 3:
      p.eta[0] = obs.covariate.dot(theta);
      break;
    default:
      p.eta[0] = theta[0] + theta[1] * obs.covariate[0];
  }
  return p;
}

/// grad += scale * J^T d_eta, with J the Jacobian of the predictor in theta.
template <class Out>
inline void add_design_transpose(const ModelSpec& model, const Observation& obs, const std::array<double, 2>& d_eta,
                                 Out&& grad, double scale = 1.0) {
  switch (model.variant().index()) {
    case 0:
      grad[0] += scale * d_eta[0];
      break;
    case 1:
      grad[0] += scale * d_eta[0];
      grad[1] += scale * d_eta[1];
      break;
    case 2:
    case 3:
      for (Eigen::Index i = 0; i < obs.covariate.size(); ++i) grad[i] += scale * d_eta[0] * obs.covariate[i];
      break;
    default:
      grad[0] += scale * d_eta[0];
      grad[1] += scale * d_eta[0] * obs.covariate[0];
  }
}

/**
 * A scoring unit: the whole observation for Gaussian/Bernoulli models, or one
 * class of Bernoulli trials (successes or failures, with multiplicity as
 * weight) for grouped counts. Log losses are sums over units.
 */
struct UnitEval {
  double weight = 0.0;
  double logp = 0.0;
  std::array<double, 2> dlogp{};  // d logp / d eta
};

struct UnitEvals {
  std::array<UnitEval, 2> unit{};
  std::size_t count = 0;
};

inline UnitEvals unit_evals(const ModelSpec& model, const Predictor& pred, const Observation& obs) {
  UnitEvals out;
  switch (model.family()) {
    case Family::Gaussian: {
      const double s2 = model.sigma() * model.sigma();
      UnitEval u;
      u.weight = 1.0;
      u.logp = -0.5 * static_cast<double>(pred.size) * (kLog2Pi + std::log(s2));
      for (std::size_t d = 0; d < pred.size; ++d) {
        const double r = obs.response[static_cast<Eigen::Index>(d)] - pred.eta[d];
        u.logp -= 0.5 * r * r / s2;
        u.dlogp[d] = r / s2;
      }
      out.unit[0] = u;
      out.count = 1;
      break;
    }
    case Family::Bernoulli: {
      const double y = obs.response[0];
      const double eta = pred.eta[0];
      UnitEval u;
      u.weight = 1.0;
      u.logp = y > 0.5 ? -softplus(-eta) : -softplus(eta);
      u.dlogp[0] = y - sigmoid(eta);
      out.unit[0] = u;
      out.count = 1;
      break;
    }
    case Family::Binomial: {
      const double eta = pred.eta[0];
      const double s = static_cast<double>(obs.counts->successes);
      const double f = static_cast<double>(obs.counts->tries - obs.counts->successes);
      const double mu = sigmoid(eta);
      if (s > 0) out.unit[out.count++] = UnitEval{s, -softplus(-eta), {1.0 - mu, 0.0}};
      if (f > 0) out.unit[out.count++] = UnitEval{f, -softplus(eta), {-mu, 0.0}};
      break;
    }
  }
  return out;
}

inline std::string describe(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  os << "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ")";
  return os.str();
}

/// log p_theta(obs.response | obs.covariate).
inline double log_density(const ModelSpec& model, const Theta& theta, const Observation& obs) {
  check_theta(model, theta.values());
  check_observation(model, obs);
  const auto units = unit_evals(model, predictor(model, theta.values(), obs), obs);
  double lp = 0.0;
  for (std::size_t u = 0; u < units.count; ++u) lp += units.unit[u].weight * units.unit[u].logp;
  if (obs.counts) {
    const double t = static_cast<double>(obs.counts->tries);
    const double s = static_cast<double>(obs.counts->successes);
    lp += std::lgamma(t + 1) - std::lgamma(s + 1) - std::lgamma(t - s + 1);
  }
  if (!std::isfinite(lp)) throw NumericError("log_density is not finite at theta = " + describe(theta.values()));
  return lp;
}

inline Vector grad_log_density(const ModelSpec& model, const Theta& theta, const Observation& obs) {
  check_theta(model, theta.values());
  check_observation(model, obs);
  const auto units = unit_evals(model, predictor(model, theta.values(), obs), obs);
  std::array<double, 2> d{};
  for (std::size_t u = 0; u < units.count; ++u)
    for (std::size_t k = 0; k < 2; ++k) d[k] += units.unit[u].weight * units.unit[u].dlogp[k];
  Vector g = Vector::Zero(static_cast<Eigen::Index>(model.dim()));
  add_design_transpose(model, obs, d, g);
  if (!g.allFinite()) throw NumericError("grad_log_density is not finite at theta = " + describe(theta.values()));
  return g;
}

/// One draw from P_theta(. | covariate). `tries` is used by BinomialLogit only.
inline Observation sample_predictive(const ModelSpec& model, const Theta& theta, const Vector& covariate, Rng& rng,
                                     std::int64_t tries = 1) {
  check_theta(model, theta.values());
  if (static_cast<std::size_t>(covariate.size()) != model.covariate_dim())
    throw ConfigError(model.name() + ": covariate has wrong length for sampling");
  Observation obs;
  obs.covariate = covariate;
  const Predictor pred = predictor(model, theta.values(), obs);
  switch (model.family()) {
    case Family::Gaussian:
      obs.response.resize(static_cast<Eigen::Index>(pred.size));
      for (std::size_t d = 0; d < pred.size; ++d)
        obs.response[static_cast<Eigen::Index>(d)] = pred.eta[d] + model.sigma() * rng.normal();
      break;
    case Family::Bernoulli:
      obs.response = Vector::Constant(1, rng.uniform() < sigmoid(pred.eta[0]) ? 1.0 : 0.0);
      break;
    case Family::Binomial: {
      std::binomial_distribution<std::int64_t> draw(tries, sigmoid(pred.eta[0]));
      obs.counts = Counts{tries, draw(rng)};
      break;
    }
  }
  return obs;
}

inline Observation sample_predictive(const ModelSpec& model, const Theta& theta, Rng& rng) {
  return sample_predictive(model, theta, Vector(), rng);
}

// Closed-form Gaussian-kernel embeddings, k(a, b) = exp(-|a-b|^2 / (2 gamma^2)).
namespace embedding {

/// E_{Y ~ N(eta, sigma^2 I)} k(Y, y); optional gradient with respect to eta.
inline double mean(const Predictor& eta, const double* y, double sigma, double gamma, double* grad_eta = nullptr) {
  const double g2 = gamma * gamma;
  const double v = g2 + sigma * sigma;
  double sq = 0.0;
  for (std::size_t d = 0; d < eta.size; ++d) sq += (eta.eta[d] - y[d]) * (eta.eta[d] - y[d]);
  const double val = std::pow(g2 / v, 0.5 * static_cast<double>(eta.size)) * std::exp(-0.5 * sq / v);
  if (grad_eta)
    for (std::size_t d = 0; d < eta.size; ++d) grad_eta[d] = -(eta.eta[d] - y[d]) / v * val;
  return val;
}

/// E_{Y ~ N(a, sigma^2 I), Y' ~ N(b, sigma^2 I)} k(Y, Y'); optional gradient in a.
inline double cross(const Predictor& a, const Predictor& b, double sigma, double gamma, double* grad_a = nullptr) {
  const double g2 = gamma * gamma;
  const double v = g2 + 2.0 * sigma * sigma;
  double sq = 0.0;
  for (std::size_t d = 0; d < a.size; ++d) sq += (a.eta[d] - b.eta[d]) * (a.eta[d] - b.eta[d]);
  const double val = std::pow(g2 / v, 0.5 * static_cast<double>(a.size)) * std::exp(-0.5 * sq / v);
  if (grad_a)
    for (std::size_t d = 0; d < a.size; ++d) grad_a[d] = -(a.eta[d] - b.eta[d]) / v * val;
  return val;
}

}  // namespace embedding

inline void require_closed_form(const ModelSpec& model) {
  if (!model.gaussian_response())
    throw ConfigError("no closed form kernel embedding for " + model.name() +
                      "; use a MonteCarlo kernel estimator instead");
}

/// E_{X ~ P_theta} k_gamma(X, point). `covariate` is required for regression.
inline double kernel_mean(const ModelSpec& model, const Theta& theta, double gamma, const Vector& point,
                          const Vector& covariate = Vector()) {
  require_closed_form(model);
  check_theta(model, theta.values());
  if (!(gamma > 0.0)) throw ConfigError("kernel lengthscale must be positive");
  if (static_cast<std::size_t>(point.size()) != model.response_dim())
    throw ConfigError("kernel_mean: point has wrong dimension");
  Observation obs{point, std::nullopt, covariate};
  check_observation(model, obs);
  return embedding::mean(predictor(model, theta.values(), obs), point.data(), model.sigma(), gamma);
}

inline double kernel_mean(const ModelSpec& model, const Theta& theta, double gamma, double point) {
  return kernel_mean(model, theta, gamma, Vector::Constant(1, point));
}

/// E_{X ~ P_theta1, X' ~ P_theta2} k_gamma(X, X').
inline double kernel_cross(const ModelSpec& model, const Theta& theta1, const Theta& theta2, double gamma,
                           const Vector& covariate = Vector()) {
  require_closed_form(model);
  check_theta(model, theta1.values());
  check_theta(model, theta2.values());
  if (!(gamma > 0.0)) throw ConfigError("kernel lengthscale must be positive");
  if (static_cast<std::size_t>(covariate.size()) != model.covariate_dim())
    throw ConfigError("kernel_cross: covariate has wrong length");
  Observation obs{Vector::Zero(static_cast<Eigen::Index>(model.response_dim())), std::nullopt, covariate};
  return embedding::cross(predictor(model, theta1.values(), obs), predictor(model, theta2.values(), obs),
                          model.sigma(), gamma);
}

/// Residual scale of an ordinary least-squares fit y ~ X beta (no intercept),
/// sigma^2 = sum (y - X beta)^2 / (n - d - 1).
inline double ols_sigma(std::span<const Observation> data) {
  if (data.empty()) throw ConfigError("ols_sigma: empty dataset");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = data.front().covariate.size();
  if (n <= d + 1) throw ConfigError("ols_sigma: need more rows than covariates + 1");
  Matrix x(n, d);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = data[static_cast<std::size_t>(i)].covariate.transpose();
    y[i] = data[static_cast<std::size_t>(i)].response[0];
  }
  const Vector beta = x.colPivHouseholderQr().solve(y);
  const double rss = (y - x * beta).squaredNorm();
  return std::sqrt(rss / static_cast<double>(n - d - 1));
}

}  // namespace proflow
