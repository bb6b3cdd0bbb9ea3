#pragma once

// Numerical self-checks exposed by the command line tool.

#include "proflow/evaluation.hpp"
#include "proflow/mala.hpp"
#include "proflow/particle_sampler.hpp"

#include <string>
#include <vector>

namespace proflow::checks {

struct CheckLine {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline Vector random_vector(std::size_t dim, double scale, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline std::vector<Observation> random_data(const ModelSpec& model, std::size_t n, Rng& rng) {
  std::vector<Observation> out;
  const Theta truth(random_vector(model.dim(), 0.7, rng));
  for (std::size_t i = 0; i < n; ++i) {
    const Vector x = random_vector(model.covariate_dim(), 1.0, rng);
    if (model.family() == Family::Binomial) {
      Vector d = Vector::Constant(1, 2.0 + 18.0 * rng.uniform());
      out.push_back(sample_predictive(model, truth, d, rng, 20 + static_cast<std::int64_t>(rng.index(50))));
    } else {
      out.push_back(sample_predictive(model, truth, x, rng));
    }
  }
  return out;
}

inline std::vector<ModelSpec> all_models() {
  return {ModelSpec::gaussian_location(1.3), ModelSpec::iso_gaussian_2d(0.8), ModelSpec::linear_regression(2, 1.1),
          ModelSpec::logistic_regression(2), ModelSpec::binomial_logit()};
}

}  // namespace detail

/**
 * Central-difference check of every interaction gradient, loss gradient and
 * Gibbs log-target gradient at `points` random configurations per variant.
 */
inline std::vector<CheckLine> gradient_suite(std::uint64_t seed, std::size_t points = 20, double tol = 1e-4) {
  std::vector<CheckLine> lines;
  Rng rng = Rng::substream(seed, {label_of("gradcheck")});
  for (const auto& model : detail::all_models()) {
    const auto data = detail::random_data(model, 5, rng);
    std::vector<LossSpec> losses{LossSpec::log_di(model), LossSpec::log_ms(2), LossSpec::log_ms(3),
                                 LossSpec::log_score()};
    if (model.gaussian_response()) {
      const KernelSpec k = median_heuristic(data);
      losses.push_back(LossSpec::kernel_tandem(k));
      losses.push_back(LossSpec::kernel_tandem(k, MonteCarlo{8}));
      losses.push_back(LossSpec::kernel_gibbs(k));
      losses.push_back(LossSpec::kernel_gibbs(k, MonteCarlo{8}));
    }
    for (const auto& loss : losses) {
      double worst = 0.0;
      for (std::size_t t = 0; t < points; ++t) {
        std::vector<Theta> others;
        for (std::size_t s = 1; s < loss.order(); ++s) others.emplace_back(detail::random_vector(model.dim(), 0.8, rng));
        std::vector<KernelNoise> noise;
        for (std::size_t s = 0; s < loss.order() && loss.mc_samples(); ++s)
          noise.push_back(draw_kernel_noise(loss.mc_samples(), model.response_dim(), rng));
        const Vector at = detail::random_vector(model.dim(), 0.8, rng);
        auto f = [&](const Vector& v) { return sym_interaction_value(loss, model, data, Theta(v), others, noise); };
        auto g = [&](const Vector& v) { return sym_interaction_grad(loss, model, data, Theta(v), others, noise); };
        worst = std::max(worst, finite_diff_check(f, g, std::span<const Vector>(&at, 1)));
      }
      std::string label = loss.name();
      if (std::holds_alternative<LossSpec::LogMS>(loss.variant())) label += " k=" + std::to_string(loss.order());
      if (loss.mc_samples()) label += "/mc";
      lines.push_back({"interaction " + label + " on " + model.name(), worst, tol, worst < tol});
    }
    const GaussianPrior prior = GaussianPrior::standard(model.dim(), 2.0);
    std::vector<LossSpec> targets{LossSpec::log_score()};
    if (model.gaussian_response()) {
      const KernelSpec k = median_heuristic(data);
      targets.push_back(LossSpec::kernel_gibbs(k));
      targets.push_back(LossSpec::kernel_gibbs(k, MonteCarlo{8}));
    }
    for (const auto& loss : targets) {
      GibbsTarget target(model, loss, data, 7.0, prior);
      target.refresh(rng);
      std::vector<Vector> pts;
      for (std::size_t t = 0; t < points; ++t) pts.push_back(detail::random_vector(model.dim(), 0.8, rng));
      const double err = finite_diff_check([&](const Vector& v) { return target(v).value; },
                                           [&](const Vector& v) { return target(v).grad; }, pts);
      lines.push_back({"gibbs log target " + loss.name() + (loss.mc_samples() ? "/mc" : "") + " on " + model.name(),
                       err, tol, err < tol});
    }
  }
  return lines;
}

namespace detail {

// Composite Simpson rule for E_{Y ~ N(mu, s^2)} f(Y).
template <class F>
double gauss_expect(double mu, double s, F&& f, int panels = 4000) {
  const double lo = mu - 12.0 * s, hi = mu + 12.0 * s;
  const double h = (hi - lo) / panels;
  double acc = 0.0;
  for (int i = 0; i <= panels; ++i) {
    const double y = lo + i * h;
    const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(-0.5 * (y - mu) * (y - mu) / (s * s)) * f(y);
  }
  return acc * h / 3.0 / (s * std::sqrt(2.0 * M_PI));
}

}  // namespace detail

/// Scoring-rule identities and closed-form kernel embeddings against
/// quadrature and direct summation.
inline std::vector<CheckLine> oracle_suite(std::uint64_t seed) {
  std::vector<CheckLine> lines;
  Rng rng = Rng::substream(seed, {label_of("oracle-check")});
  const ModelSpec model = ModelSpec::gaussian_location(1.0);

  double kernel_err = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double gamma = 0.3 + 2.0 * rng.uniform();
    const Theta a{2.0 * rng.normal()}, b{2.0 * rng.normal()};
    const double y = 2.0 * rng.normal();
    const auto k = [&](double u, double v) { return std::exp(-(u - v) * (u - v) / (2.0 * gamma * gamma)); };
    const double quad_mean = detail::gauss_expect(a[0], 1.0, [&](double u) { return k(u, y); });
    const double quad_cross = detail::gauss_expect(a[0], 1.0, [&](double u) {
      return detail::gauss_expect(b[0], 1.0, [&](double v) { return k(u, v); }, 400);
    }, 400);
    kernel_err = std::max({kernel_err, std::abs(kernel_mean(model, a, gamma, y) - quad_mean),
                           std::abs(kernel_cross(model, a, b, gamma) - quad_cross)});
  }
  lines.push_back({"kernel embeddings vs quadrature", kernel_err, 1e-7, kernel_err < 1e-7});

  double tandem_err = 0.0, di_violation = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t atoms = 1 + rng.index(5);
    std::vector<Theta> th;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t j = 0; j < atoms; ++j) {
      th.emplace_back(Vector::Constant(1, 2.0 * rng.normal()));
      w.push_back(0.1 + rng.uniform());
      total += w.back();
    }
    for (auto& x : w) x /= total;
    // renormalise so the weights sum to one to within rounding
    w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
    const Observation obs = Observation::value(2.0 * rng.normal());
    const LossSpec tandem = LossSpec::kernel_tandem(KernelSpec(0.5 + rng.uniform()));
    double pair_sum = 0.0, di_sum = 0.0;
    for (std::size_t i = 0; i < atoms; ++i)
      for (std::size_t j = 0; j < atoms; ++j) {
        pair_sum += w[i] * w[j] * tandem_loss_mmd(model, th[i], th[j], obs, tandem, rng).value;
        di_sum += w[i] * w[j] * loss_di_log(model, th[i], th[j], obs, model.density_sup()).value;
      }
    const double mmd = exact_predictive_score_discrete(model, th, w, obs, MmdScoreRule{tandem.kernel_spec()});
    const double log = exact_predictive_score_discrete(model, th, w, obs, LogScoreRule{});
    tandem_err = std::max(tandem_err, std::abs(pair_sum - mmd));
    di_violation = std::max(di_violation, log - di_sum);
  }
  lines.push_back({"tandem loss Q x Q average = predictive kernel score", tandem_err, 1e-10, tandem_err < 1e-10});
  lines.push_back({"DI loss upper-bounds predictive log score", std::max(di_violation, 0.0), 1e-12,
                   di_violation <= 1e-12});
  return lines;
}

}  // namespace proflow::checks
