#pragma once

#include "proflow/particle_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace proflow {

struct PredictiveReport {
  double elpd = 0.0;
  std::vector<double> lppd_per_point;
  std::size_t n_test = 0;
  // test points where every atom assigns zero density (lppd = -inf)
  std::vector<std::size_t> zero_density;
};

/// log((1/S) sum_s p_theta_s(obs)). Returns -inf when every atom has zero density.
inline double lppd_point(const PosteriorApprox& posterior, const ModelSpec& model, const Observation& obs) {
  if (posterior.size() == 0) throw ConfigError("lppd_point: empty posterior");
  check_observation(model, obs);
  std::vector<double> lp(posterior.size());
  for (std::size_t s = 0; s < posterior.size(); ++s) {
    try {
      lp[s] = log_density(model, posterior.atom(s), obs);
    } catch (const NumericError&) {
      lp[s] = -std::numeric_limits<double>::infinity();
    }
  }
  return log_sum_exp(lp) - std::log(static_cast<double>(posterior.size()));
}

inline PredictiveReport elpd(const PosteriorApprox& posterior, const ModelSpec& model,
                             std::span<const Observation> test, std::size_t threads = 1) {
  if (posterior.size() == 0) throw ConfigError("elpd: empty posterior");
  if (test.empty()) throw ConfigError("elpd: empty test set");
  PredictiveReport r;
  r.n_test = test.size();
  r.lppd_per_point.resize(test.size());
  parallel_for(test.size(), threads, [&](std::size_t i) { r.lppd_per_point[i] = lppd_point(posterior, model, test[i]); });
  for (std::size_t i = 0; i < test.size(); ++i) {
    r.elpd += r.lppd_per_point[i];
    if (std::isinf(r.lppd_per_point[i])) r.zero_density.push_back(i);
  }
  return r;
}

/// Draws from the atom mixture: pick an atom uniformly, then sample from it.
/// A single-atom posterior skips the atom draw.
inline std::vector<Observation> predictive_sample(const PosteriorApprox& posterior, const ModelSpec& model,
                                                  const std::optional<Vector>& covariate, std::size_t count,
                                                  Rng& rng, std::int64_t tries = 1) {
  if (posterior.size() == 0) throw ConfigError("predictive_sample: empty posterior");
  const Vector x = covariate.value_or(Vector());
  std::vector<Observation> out;
  out.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t s = posterior.size() == 1 ? 0 : rng.index(posterior.size());
    out.push_back(sample_predictive(model, posterior.atom(s), x, rng, tries));
  }
  return out;
}

/// Fraction of atoms within Euclidean `radius` of `center`.
inline double mode_mass(const PosteriorApprox& posterior, const Vector& center, double radius) {
  if (!(radius > 0.0)) throw ConfigError("mode_mass: radius must be positive");
  if (posterior.size() == 0) throw ConfigError("mode_mass: empty posterior");
  if (center.size() != posterior.atoms.cols()) throw ConfigError("mode_mass: center has the wrong dimension");
  std::size_t inside = 0;
  for (Eigen::Index s = 0; s < posterior.atoms.rows(); ++s)
    if ((posterior.atoms.row(s).transpose() - center).norm() <= radius) ++inside;
  return static_cast<double>(inside) / static_cast<double>(posterior.size());
}

struct ModeMass {
  Vector center;
  double radius = 0.0;
  double fraction = 0.0;
};

struct PosteriorSummary {
  Vector mean;
  Vector marginal_sd;
  Vector spread;  // max - min per dimension
  std::vector<ModeMass> mode_masses;
};

inline PosteriorSummary summarize(const PosteriorApprox& posterior,
                                  const std::vector<std::pair<Vector, double>>& modes = {}) {
  if (posterior.size() == 0) throw ConfigError("summarize: empty posterior");
  const Matrix& a = posterior.atoms;
  PosteriorSummary s;
  s.mean = a.colwise().mean().transpose();
  const Matrix centered = a.rowwise() - s.mean.transpose();
  s.marginal_sd = (centered.array().square().colwise().sum() / static_cast<double>(a.rows())).sqrt().transpose();
  s.spread = (a.colwise().maxCoeff() - a.colwise().minCoeff()).transpose();
  for (const auto& [center, radius] : modes) s.mode_masses.push_back({center, radius, mode_mass(posterior, center, radius)});
  return s;
}

/**
 * Two-mode summary of a 1-D sample on an equal-width histogram. The two
 * tallest local maxima are the modes; each mode's mass is the fraction of
 * values on its side of the lowest bin between them.
 */
struct BimodalityReport {
  bool found = false;
  double mass_low = 0.0;
  double mass_high = 0.0;
  double peak_low = 0.0;   // bin counts
  double peak_high = 0.0;
  double trough = 0.0;
  double trough_ratio = 1.0;  // trough / smaller peak
};

inline BimodalityReport bimodality(std::span<const double> values, std::size_t bins = 20) {
  if (values.empty() || bins < 3) throw ConfigError("bimodality: need values and at least 3 bins");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  BimodalityReport r;
  if (!(hi > lo)) return r;
  std::vector<double> h(bins, 0.0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) h[std::min(bins - 1, static_cast<std::size_t>((v - lo) / width))] += 1.0;

  std::vector<std::size_t> peaks;
  for (std::size_t b = 0; b < bins; ++b) {
    const double left = b == 0 ? -1.0 : h[b - 1];
    const double right = b + 1 == bins ? -1.0 : h[b + 1];
    // plateaus count once, at their left edge
    if (h[b] > left && h[b] >= right && h[b] > 0.0) peaks.push_back(b);
  }
  if (peaks.size() < 2) return r;
  std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return h[a] > h[b]; });
  const std::size_t a = std::min(peaks[0], peaks[1]);
  const std::size_t b = std::max(peaks[0], peaks[1]);
  std::size_t trough = a;
  for (std::size_t t = a; t <= b; ++t)
    if (h[t] < h[trough]) trough = t;
  double left = 0.0, right = 0.0;
  for (std::size_t t = 0; t < bins; ++t) (t < trough ? left : right) += h[t];
  // the trough bin is split evenly between the two basins
  left += 0.5 * h[trough];
  right -= 0.5 * h[trough];
  const double total = static_cast<double>(values.size());
  r.found = true;
  r.mass_low = left / total;
  r.mass_high = right / total;
  r.peak_low = h[a];
  r.peak_high = h[b];
  r.trough = h[trough];
  r.trough_ratio = h[trough] / std::min(h[a], h[b]);
  return r;
}

/**
 * Worst relative error between grad_fn and central differences of fn over
 * `points`, with step 1e-5 * max(1, |theta_d|) per coordinate. The error at a
 * point is |g - fd|_inf / max(|fd|_inf, 1e-6).
 */
inline double finite_diff_check(const std::function<double(const Vector&)>& fn,
                                const std::function<Vector(const Vector&)>& grad_fn,
                                std::span<const Vector> points) {
  double worst = 0.0;
  for (const auto& p : points) {
    if (!p.allFinite()) throw ConfigError("finite_diff_check: non-finite point");
    const Vector g = grad_fn(p);
    if (g.size() != p.size()) throw ConfigError("finite_diff_check: gradient has the wrong length");
    Vector fd(p.size());
    for (Eigen::Index d = 0; d < p.size(); ++d) {
      const double h = 1e-5 * std::max(1.0, std::abs(p[d]));
      Vector up = p, down = p;
      up[d] += h;
      down[d] -= h;
      fd[d] = (fn(up) - fn(down)) / (up[d] - down[d]);
    }
    const double denom = std::max(fd.cwiseAbs().maxCoeff(), 1e-6);
    worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / denom);
  }
  return worst;
}

}  // namespace proflow
