#pragma once

#include "proflow/model.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace proflow {

/// Gaussian kernel k(x, y) = exp(-|x - y|^2 / (2 lengthscale^2)).
struct KernelSpec {
  double lengthscale = 1.0;

  explicit KernelSpec(double gamma = 1.0) : lengthscale(gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("kernel lengthscale must be positive and finite");
  }
};

inline constexpr double kLengthscaleFloor = 1e-6;

/**
 * Median heuristic on the rows of `points`:
 * gamma = sqrt(median squared pairwise distance / 2). Even-length medians take
 * the lower-middle order statistic; all-equal data fall back to a 1e-6 floor.
 */
inline KernelSpec median_heuristic(const Matrix& points) {
  const auto n = points.rows();
  if (n < 2) throw ConfigError("median_heuristic needs at least 2 points");
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) sq.push_back((points.row(i) - points.row(j)).squaredNorm());
  const auto mid = sq.begin() + static_cast<std::ptrdiff_t>((sq.size() - 1) / 2);
  std::nth_element(sq.begin(), mid, sq.end());
  return KernelSpec(std::max(std::sqrt(*mid / 2.0), kLengthscaleFloor));
}

inline KernelSpec median_heuristic(std::span<const double> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return median_heuristic(m);
}

/// Median heuristic over the real responses of a dataset.
inline KernelSpec median_heuristic(std::span<const Observation> data) {
  if (data.empty()) throw ConfigError("median_heuristic needs at least 2 points");
  const auto r = data.front().response.size();
  if (r == 0) throw ConfigError("median_heuristic needs real-valued responses");
  Matrix m(static_cast<Eigen::Index>(data.size()), r);
  for (std::size_t i = 0; i < data.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = data[i].response.transpose();
  return median_heuristic(m);
}

struct ClosedForm {};
struct MonteCarlo {
  std::size_t samples = 32;
};
using KernelEstimator = std::variant<ClosedForm, MonteCarlo>;

/**
 * A predictive-score loss L(theta_1..theta_k, x). The interaction order k is
 * 2 for the kernel tandem and DI losses, configurable for MS, and 1 for the
 * per-parameter (Gibbs) losses.
 */
class LossSpec {
 public:
  struct KernelTandem {
    KernelSpec kernel;
    KernelEstimator estimator;
  };
  struct KernelGibbs {
    KernelSpec kernel;
    KernelEstimator estimator;
  };
  struct LogDI {
    double density_sup = 1.0;
  };
  struct LogMS {
    std::size_t k = 2;
  };
  struct LogScore {};

  using Variant = std::variant<KernelTandem, KernelGibbs, LogDI, LogMS, LogScore>;

  static LossSpec kernel_tandem(KernelSpec kernel, KernelEstimator est = ClosedForm{}) {
    return LossSpec(KernelTandem{kernel, est});
  }
  static LossSpec kernel_gibbs(KernelSpec kernel, KernelEstimator est = ClosedForm{}) {
    return LossSpec(KernelGibbs{kernel, est});
  }
  static LossSpec log_di(double density_sup) { return LossSpec(LogDI{density_sup}); }
  /// DI loss with the density bound derived from the model.
  static LossSpec log_di(const ModelSpec& model) { return LossSpec(LogDI{model.density_sup()}); }
  static LossSpec log_ms(std::size_t k) { return LossSpec(LogMS{k}); }
  static LossSpec log_score() { return LossSpec(LogScore{}); }

  explicit LossSpec(Variant v) : v_(v) {
    std::visit(
        [](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, LogDI>) {
            if (!(l.density_sup > 0.0)) throw ConfigError("LogDI density bound u must be positive");
          } else if constexpr (std::is_same_v<L, LogMS>) {
            if (l.k < 1) throw ConfigError("LogMS needs k >= 1");
          } else if constexpr (std::is_same_v<L, KernelTandem> || std::is_same_v<L, KernelGibbs>) {
            if (auto* mc = std::get_if<MonteCarlo>(&l.estimator); mc && mc->samples < 2)
              throw ConfigError("MonteCarlo kernel estimator needs m >= 2 samples");
          }
        },
        v_);
  }

  const Variant& variant() const { return v_; }

  std::size_t order() const {
    if (auto* ms = std::get_if<LogMS>(&v_)) return ms->k;
    if (std::holds_alternative<KernelTandem>(v_) || std::holds_alternative<LogDI>(v_)) return 2;
    return 1;
  }

  bool kernel() const {
    return std::holds_alternative<KernelTandem>(v_) || std::holds_alternative<KernelGibbs>(v_);
  }

  const KernelSpec& kernel_spec() const {
    if (auto* t = std::get_if<KernelTandem>(&v_)) return t->kernel;
    if (auto* g = std::get_if<KernelGibbs>(&v_)) return g->kernel;
    throw ConfigError(name() + " has no kernel");
  }

  /// Number of Monte Carlo draws per parameter, or 0 for closed-form/log losses.
  std::size_t mc_samples() const {
    const KernelEstimator* est = nullptr;
    if (auto* t = std::get_if<KernelTandem>(&v_)) est = &t->estimator;
    if (auto* g = std::get_if<KernelGibbs>(&v_)) est = &g->estimator;
    if (!est) return 0;
    if (auto* mc = std::get_if<MonteCarlo>(est)) return mc->samples;
    return 0;
  }

  std::string name() const {
    static constexpr const char* names[] = {"ExactKernelTandem", "ExactKernelGibbs", "LogDI", "LogMS", "LogScore"};
    return names[v_.index()];
  }

  void validate_for(const ModelSpec& model) const {
    if (kernel()) {
      if (!model.gaussian_response())
        throw ConfigError(name() + " requires a real-valued Gaussian response model, got " + model.name());
      return;
    }
    if (auto* di = std::get_if<LogDI>(&v_)) {
      const double sup = model.density_sup();
      if (di->density_sup < sup * (1.0 - 1e-12))
        throw ConfigError("LogDI bound u = " + std::to_string(di->density_sup) + " is below the density supremum " +
                          std::to_string(sup) + " of " + model.name());
    }
  }

 private:
  Variant v_;
};

/// Loss value and its gradient with respect to the first parameter slot.
struct LossEval {
  double value = 0.0;
  Vector grad_first;
};

/// Frozen standard-normal draws for Monte Carlo kernel estimators, one row per
/// draw and one column per response coordinate. Y = eta + sigma * noise.
using KernelNoise = Matrix;

inline KernelNoise draw_kernel_noise(std::size_t m, std::size_t response_dim, Rng& rng) {
  KernelNoise z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(response_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index d = 0; d < z.cols(); ++d) z(i, d) = rng.normal();
  return z;
}

// Losses expressed on linear predictors; the public functions below and the
// particle sampler share these.
namespace detail {

inline double kern(const double* a, const double* b, std::size_t r, double inv2g2, double* grad_a) {
  double sq = 0.0;
  for (std::size_t d = 0; d < r; ++d) sq += (a[d] - b[d]) * (a[d] - b[d]);
  const double k = std::exp(-sq * inv2g2);
  if (grad_a)
    for (std::size_t d = 0; d < r; ++d) grad_a[d] += -2.0 * inv2g2 * (a[d] - b[d]) * k;
  return k;
}

/// (1/m) sum_i k(eta + sigma z_i, y) and its eta-gradient (accumulated).
inline double mc_mean(const Predictor& eta, const double* y, double sigma, double gamma, const KernelNoise& z,
                      double* grad) {
  const std::size_t r = eta.size;
  const double inv2g2 = 0.5 / (gamma * gamma);
  const auto m = z.rows();
  double acc = 0.0;
  double g[2] = {0.0, 0.0};
  double s[2];
  for (Eigen::Index i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < r; ++d) s[d] = eta.eta[d] + sigma * z(i, static_cast<Eigen::Index>(d));
    acc += kern(s, y, r, inv2g2, grad ? g : nullptr);
  }
  if (grad)
    for (std::size_t d = 0; d < r; ++d) grad[d] += g[d] / static_cast<double>(m);
  return acc / static_cast<double>(m);
}

/// (1/m^2) sum_ij k(a + sigma z1_i, b + sigma z2_j), gradient in a accumulated.
inline double mc_cross(const Predictor& a, const Predictor& b, double sigma, double gamma, const KernelNoise& z1,
                       const KernelNoise& z2, double* grad_a) {
  const std::size_t r = a.size;
  const double inv2g2 = 0.5 / (gamma * gamma);
  double acc = 0.0;
  double g[2] = {0.0, 0.0};
  double s[2], t[2];
  for (Eigen::Index i = 0; i < z1.rows(); ++i) {
    for (std::size_t d = 0; d < r; ++d) s[d] = a.eta[d] + sigma * z1(i, static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < z2.rows(); ++j) {
      for (std::size_t d = 0; d < r; ++d) t[d] = b.eta[d] + sigma * z2(j, static_cast<Eigen::Index>(d));
      acc += kern(s, t, r, inv2g2, grad_a ? g : nullptr);
    }
  }
  const double mm = static_cast<double>(z1.rows() * z2.rows());
  if (grad_a)
    for (std::size_t d = 0; d < r; ++d) grad_a[d] += g[d] / mm;
  return acc / mm;
}

/// U-statistic (1/(m(m-1))) sum_{i != j} k(Y_i, Y_j). Shift invariant, so its
/// eta-gradient vanishes.
inline double mc_self(std::size_t r, double sigma, double gamma, const KernelNoise& z) {
  const double inv2g2 = 0.5 / (gamma * gamma);
  const auto m = z.rows();
  double acc = 0.0;
  double s[2], t[2];
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      for (std::size_t d = 0; d < r; ++d) {
        s[d] = sigma * z(i, static_cast<Eigen::Index>(d));
        t[d] = sigma * z(j, static_cast<Eigen::Index>(d));
      }
      acc += kern(s, t, r, inv2g2, nullptr);
    }
  return acc / static_cast<double>(m * (m - 1));
}

/// DI loss -log p1 - (p1 - p2)^2 / (2u), summed over scoring units.
inline double di(const UnitEvals& a, const UnitEvals& b, double u, double* grad_a) {
  double val = 0.0;
  for (std::size_t k = 0; k < a.count; ++k) {
    const auto& ua = a.unit[k];
    const double p1 = std::exp(ua.logp);
    const double p2 = std::exp(b.unit[k].logp);
    val += ua.weight * (-ua.logp - (p1 - p2) * (p1 - p2) / (2.0 * u));
    if (grad_a)
      for (std::size_t d = 0; d < 2; ++d)
        grad_a[d] += ua.weight * (-ua.dlogp[d] - (p1 - p2) * p1 * ua.dlogp[d] / u);
  }
  return val;
}

/// Slot-averaged DI loss (L(a, b) + L(b, a)) / 2 and its gradient in a.
inline double di_sym(const UnitEvals& a, const UnitEvals& b, double u, double* grad_a) {
  double val = 0.0;
  for (std::size_t k = 0; k < a.count; ++k) {
    const auto& ua = a.unit[k];
    const double p1 = std::exp(ua.logp);
    const double p2 = std::exp(b.unit[k].logp);
    val += ua.weight * 0.5 * (-ua.logp - b.unit[k].logp - (p1 - p2) * (p1 - p2) / u);
    if (grad_a)
      for (std::size_t d = 0; d < 2; ++d)
        grad_a[d] += ua.weight * 0.5 * (-ua.dlogp[d] - 2.0 * (p1 - p2) * p1 * ua.dlogp[d] / u);
  }
  return val;
}

/// MS loss -log((1/k) sum_j p_j), gradient with respect to the first slot.
inline double ms(std::span<const UnitEvals* const> slots, double* grad_first) {
  const std::size_t k = slots.size();
  const UnitEvals& first = *slots[0];
  double val = 0.0;
  double lps[64];
  std::vector<double> big;
  double* buf = lps;
  if (k > 64) {
    big.resize(k);
    buf = big.data();
  }
  for (std::size_t u = 0; u < first.count; ++u) {
    for (std::size_t j = 0; j < k; ++j) buf[j] = slots[j]->unit[u].logp;
    const double lse = log_sum_exp(buf, k);
    if (!std::isfinite(lse)) throw NumericError("LogMS: every mixture component has zero density at the observation");
    val += first.unit[u].weight * (std::log(static_cast<double>(k)) - lse);
    if (grad_first) {
      const double w = std::exp(first.unit[u].logp - lse);
      for (std::size_t d = 0; d < 2; ++d) grad_first[d] += first.unit[u].weight * (-w * first.unit[u].dlogp[d]);
    }
  }
  return val;
}

}  // namespace detail

namespace detail {

inline void check_kernel_loss(const ModelSpec& model, const LossSpec& loss, bool tandem) {
  if (tandem ? !std::holds_alternative<LossSpec::KernelTandem>(loss.variant())
             : !std::holds_alternative<LossSpec::KernelGibbs>(loss.variant()))
    throw ConfigError(std::string(tandem ? "tandem_loss_mmd" : "gibbs_loss_mmd") + " called with " + loss.name());
  if (!model.gaussian_response())
    throw ConfigError("no closed form kernel embedding for " + model.name() +
                      "; kernel losses need a Gaussian response model");
}

inline LossEval finish(const ModelSpec& model, const Observation& obs, double value, const std::array<double, 2>& d) {
  LossEval out{value, Vector::Zero(static_cast<Eigen::Index>(model.dim()))};
  add_design_transpose(model, obs, d, out.grad_first);
  if (!std::isfinite(out.value) || !out.grad_first.allFinite()) throw NumericError("loss evaluation is not finite");
  return out;
}

}  // namespace detail

/**
 * Kernel tandem loss E[k(Y, Y')] - E[k(Y, y)] - E[k(Y', y)] with
 * Y ~ P_theta1, Y' ~ P_theta2. Monte Carlo estimators use the supplied
 * frozen noise and return the pathwise gradient of that estimate.
 */
inline LossEval tandem_loss_mmd(const ModelSpec& model, const Theta& theta1, const Theta& theta2,
                                const Observation& obs, const LossSpec& loss, const KernelNoise& noise1,
                                const KernelNoise& noise2) {
  detail::check_kernel_loss(model, loss, true);
  check_theta(model, theta1.values());
  check_theta(model, theta2.values());
  check_observation(model, obs);
  const double gamma = loss.kernel_spec().lengthscale;
  const double sigma = model.sigma();
  const Predictor a = predictor(model, theta1.values(), obs);
  const Predictor b = predictor(model, theta2.values(), obs);
  const double* y = obs.response.data();
  std::array<double, 2> d{};
  double value;
  if (loss.mc_samples() == 0) {
    std::array<double, 2> gc{}, gm{};
    value = embedding::cross(a, b, sigma, gamma, gc.data()) - embedding::mean(a, y, sigma, gamma, gm.data()) -
            embedding::mean(b, y, sigma, gamma);
    for (std::size_t k = 0; k < 2; ++k) d[k] = gc[k] - gm[k];
  } else {
    std::array<double, 2> gm{};
    value = detail::mc_cross(a, b, sigma, gamma, noise1, noise2, d.data());
    value -= detail::mc_mean(a, y, sigma, gamma, noise1, gm.data());
    value -= detail::mc_mean(b, y, sigma, gamma, noise2, nullptr);
    for (std::size_t k = 0; k < 2; ++k) d[k] -= gm[k];
  }
  return detail::finish(model, obs, value, d);
}

inline LossEval tandem_loss_mmd(const ModelSpec& model, const Theta& theta1, const Theta& theta2,
                                const Observation& obs, const LossSpec& loss, Rng& rng) {
  const std::size_t m = loss.mc_samples();
  if (m == 0) return tandem_loss_mmd(model, theta1, theta2, obs, loss, KernelNoise(), KernelNoise());
  const KernelNoise z1 = draw_kernel_noise(m, model.response_dim(), rng);
  const KernelNoise z2 = draw_kernel_noise(m, model.response_dim(), rng);
  return tandem_loss_mmd(model, theta1, theta2, obs, loss, z1, z2);
}

/// Per-parameter kernel loss E[k(Y, Y')] - 2 E[k(Y, y)], Y, Y' ~ P_theta.
/// The Monte Carlo form uses the unbiased off-diagonal pairing.
inline LossEval gibbs_loss_mmd(const ModelSpec& model, const Theta& theta, const Observation& obs,
                               const LossSpec& loss, const KernelNoise& noise) {
  detail::check_kernel_loss(model, loss, false);
  check_theta(model, theta.values());
  check_observation(model, obs);
  const double gamma = loss.kernel_spec().lengthscale;
  const double sigma = model.sigma();
  const Predictor a = predictor(model, theta.values(), obs);
  const double* y = obs.response.data();
  std::array<double, 2> gm{};
  double value;
  if (loss.mc_samples() == 0) {
    value = embedding::cross(a, a, sigma, gamma) - 2.0 * embedding::mean(a, y, sigma, gamma, gm.data());
  } else {
    value = detail::mc_self(a.size, sigma, gamma, noise) - 2.0 * detail::mc_mean(a, y, sigma, gamma, noise, gm.data());
  }
  return detail::finish(model, obs, value, {-2.0 * gm[0], -2.0 * gm[1]});
}

inline LossEval gibbs_loss_mmd(const ModelSpec& model, const Theta& theta, const Observation& obs,
                               const LossSpec& loss, Rng& rng) {
  const std::size_t m = loss.mc_samples();
  if (m == 0) return gibbs_loss_mmd(model, theta, obs, loss, KernelNoise());
  return gibbs_loss_mmd(model, theta, obs, loss, draw_kernel_noise(m, model.response_dim(), rng));
}

/**
 * Diversity-inducing log loss -log p1(x) - (p1(x) - p2(x))^2 / (2u). Grouped
 * counts are scored as their individual Bernoulli trials.
 */
inline LossEval loss_di_log(const ModelSpec& model, const Theta& theta1, const Theta& theta2, const Observation& obs,
                            double u) {
  if (!(u > 0.0)) throw ConfigError("loss_di_log: density bound u must be positive");
  check_theta(model, theta1.values());
  check_theta(model, theta2.values());
  check_observation(model, obs);
  const auto a = unit_evals(model, predictor(model, theta1.values(), obs), obs);
  const auto b = unit_evals(model, predictor(model, theta2.values(), obs), obs);
  std::array<double, 2> d{};
  const double value = detail::di(a, b, u, d.data());
  return detail::finish(model, obs, value, d);
}

/// Multi-sample log loss -log((1/k) sum_j p_thetaj(x)), via log-sum-exp.
inline LossEval loss_ms_log(const ModelSpec& model, std::span<const Theta> thetas, const Observation& obs) {
  if (thetas.empty()) throw ConfigError("loss_ms_log needs k >= 1 parameters");
  check_observation(model, obs);
  std::vector<UnitEvals> evals;
  std::vector<const UnitEvals*> slots;
  evals.reserve(thetas.size());
  for (const auto& t : thetas) {
    check_theta(model, t.values());
    evals.push_back(unit_evals(model, predictor(model, t.values(), obs), obs));
  }
  for (const auto& e : evals) slots.push_back(&e);
  std::array<double, 2> d{};
  double value;
  try {
    value = detail::ms(slots, d.data());
  } catch (const NumericError&) {
    throw NumericError("loss_ms_log: all component densities are zero at observation " + describe(obs.response));
  }
  return detail::finish(model, obs, value, d);
}

/// Which score to evaluate exactly on a finitely supported mixture.
struct LogScoreRule {};
struct MmdScoreRule {
  KernelSpec kernel;
};
using ScoreRule = std::variant<LogScoreRule, MmdScoreRule>;

/**
 * Exact predictive score of the mixture sum_j w_j P_thetaj at obs. The log
 * rule returns -log sum_j w_j p_j(obs); the MMD rule returns
 * sum_ij w_i w_j E k(X_i, X_j) - 2 sum_j w_j E k(X_j, obs), dropping the
 * constant k(obs, obs).
 */
inline double exact_predictive_score_discrete(const ModelSpec& model, std::span<const Theta> atoms,
                                              std::span<const double> weights, const Observation& obs,
                                              const ScoreRule& score) {
  if (atoms.empty() || atoms.size() != weights.size())
    throw ConfigError("exact_predictive_score_discrete: atoms and weights must be nonempty and equally long");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("exact_predictive_score_discrete: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("exact_predictive_score_discrete: weights must sum to 1");
  check_observation(model, obs);

  if (std::holds_alternative<LogScoreRule>(score)) {
    std::vector<double> terms;
    for (std::size_t j = 0; j < atoms.size(); ++j)
      if (weights[j] > 0.0) terms.push_back(std::log(weights[j]) + log_density(model, atoms[j], obs));
    return -log_sum_exp(terms);
  }
  require_closed_form(model);
  const double gamma = std::get<MmdScoreRule>(score).kernel.lengthscale;
  const double sigma = model.sigma();
  std::vector<Predictor> eta;
  for (const auto& a : atoms) {
    check_theta(model, a.values());
    eta.push_back(predictor(model, a.values(), obs));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t j = 0; j < atoms.size(); ++j)
      s += weights[i] * weights[j] * embedding::cross(eta[i], eta[j], sigma, gamma);
    s -= 2.0 * weights[i] * embedding::mean(eta[i], obs.response.data(), sigma, gamma);
  }
  return s;
}

}  // namespace proflow
