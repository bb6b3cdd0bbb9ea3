#pragma once

#include "proflow/particle_sampler.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace proflow {

struct MalaConfig {
  double dt = 1e-4;
  std::size_t iters = 1000;
  std::size_t warmup = 500;
  std::uint64_t seed = 0;
  double lambda_n = 1.0;
  GaussianPrior prior;
  Vector init;  // empty: start at the prior mean
};

struct MalaDiagnostics {
  double acceptance_rate = 0.0;
  std::size_t kept_samples = 0;
  std::size_t nonfinite_rejections = 0;
};

struct TargetEval {
  double value = 0.0;
  Vector grad;
};

/**
 * Log target of a Gibbs posterior, -lambda_n * S_n(theta) + log prior(theta),
 * with S_n the average per-parameter loss over the dataset. The log-score
 * variant is the (tempered) Bayes posterior. Monte Carlo kernel losses hold
 * one frozen noise block that the caller refreshes between accept/reject
 * decisions.
 */
class GibbsTarget {
 public:
  GibbsTarget(ModelSpec model, LossSpec loss, std::vector<Observation> data, double lambda_n, GaussianPrior prior)
      : model_(std::move(model)),
        loss_(std::move(loss)),
        data_(std::move(data)),
        lambda_(lambda_n),
        prior_(std::move(prior)) {
    if (data_.empty()) throw ConfigError("Gibbs target needs a nonempty dataset");
    if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) throw ConfigError("Gibbs target lambda_n must be >= 0");
    if (!std::holds_alternative<LossSpec::LogScore>(loss_.variant()) &&
        !std::holds_alternative<LossSpec::KernelGibbs>(loss_.variant()))
      throw ConfigError("Gibbs target needs LogScore or KernelGibbs, got " + loss_.name());
    loss_.validate_for(model_);
    prior_.validate(model_.dim());
    for (const auto& o : data_) check_observation(model_, o);
    n_eff_ = effective_count(data_);
  }

  std::size_t dim() const { return model_.dim(); }
  bool noisy() const { return loss_.mc_samples() > 0; }
  const ModelSpec& model() const { return model_; }
  const GaussianPrior& prior() const { return prior_; }

  void refresh(Rng& rng) {
    if (noisy()) noise_ = draw_kernel_noise(loss_.mc_samples(), model_.response_dim(), rng);
  }
  void set_noise(KernelNoise noise) { noise_ = std::move(noise); }

  TargetEval operator()(const Vector& theta) const {
    check_theta(model_, theta);
    TargetEval out{prior_.log_density(theta), prior_.grad_log_density(theta)};
    if (lambda_ == 0.0) return out;
    if (noisy() && noise_.rows() == 0) throw ConfigError("Monte Carlo Gibbs target used before refresh()");
    const Theta t(theta);
    double loss = 0.0;
    Vector grad = Vector::Zero(theta.size());
    if (std::holds_alternative<LossSpec::LogScore>(loss_.variant())) {
      for (const auto& o : data_) {
        loss -= log_density(model_, t, o);
        grad -= grad_log_density(model_, t, o);
      }
    } else {
      for (const auto& o : data_) {
        const LossEval e = gibbs_loss_mmd(model_, t, o, loss_, noise_);
        loss += e.value;
        grad += e.grad_first;
      }
    }
    out.value -= lambda_ * loss / n_eff_;
    out.grad -= (lambda_ / n_eff_) * grad;
    return out;
  }

 private:
  ModelSpec model_;
  LossSpec loss_;
  std::vector<Observation> data_;
  double lambda_;
  GaussianPrior prior_;
  double n_eff_ = 1.0;
  KernelNoise noise_;
};

/// Value and gradient of the Gibbs log target at theta. Monte Carlo kernel
/// losses draw their frozen noise from `rng` when given.
inline TargetEval gibbs_log_target(const ModelSpec& model, std::span<const Observation> data, const Theta& theta,
                                   const LossSpec& loss, double lambda_n, const GaussianPrior& prior,
                                   Rng* rng = nullptr) {
  GibbsTarget target(model, loss, std::vector<Observation>(data.begin(), data.end()), lambda_n, prior);
  if (target.noisy()) {
    if (!rng) throw ConfigError("Monte Carlo Gibbs target needs an rng for its frozen noise");
    target.refresh(*rng);
  }
  return target(theta.values());
}

struct MalaState {
  Vector theta;
  TargetEval eval;
};

namespace detail {

template <class Target>
bool evaluate_safely(Target& target, const Vector& theta, TargetEval& out) {
  try {
    out = target(theta);
  } catch (const NumericError&) {
    return false;
  }
  return std::isfinite(out.value) && out.grad.allFinite();
}

}  // namespace detail

/**
 * One Metropolis-adjusted Langevin transition using the supplied standard
 * normal draw `xi` and uniform `u`. The proposal is
 * theta* = theta + dt grad + sqrt(2 dt) xi. A proposal whose target is not
 * finite is rejected. Returns whether the move was accepted; `nonfinite` is
 * set when the rejection came from a non-finite proposal.
 */
template <class Target>
bool mala_step(MalaState& state, double dt, Target& target, const Vector& xi, double u, bool* nonfinite = nullptr) {
  if (!state.theta.allFinite()) throw NumericError("mala_step: current state is not finite");
  if (nonfinite) *nonfinite = false;
  const Vector proposal = state.theta + dt * state.eval.grad + std::sqrt(2.0 * dt) * xi;
  TargetEval prop;
  if (!proposal.allFinite() || !detail::evaluate_safely(target, proposal, prop)) {
    if (nonfinite) *nonfinite = true;
    return false;
  }
  // log q(to | from) = -|to - from - dt grad(from)|^2 / (4 dt)
  double log_ratio = prop.value - state.eval.value;
  if (dt > 0.0) {
    const double fwd = (proposal - state.theta - dt * state.eval.grad).squaredNorm();
    const double bwd = (state.theta - proposal - dt * prop.grad).squaredNorm();
    log_ratio += (fwd - bwd) / (4.0 * dt);
  }
  if (!std::isfinite(log_ratio)) {
    if (nonfinite) *nonfinite = true;
    return false;
  }
  if (log_ratio >= 0.0 || std::log(u) < log_ratio) {
    state.theta = proposal;
    state.eval = std::move(prop);
    return true;
  }
  return false;
}

template <class Target>
bool mala_step(MalaState& state, double dt, Target& target, Rng& rng, bool* nonfinite = nullptr) {
  Vector xi(state.theta.size());
  for (Eigen::Index d = 0; d < xi.size(); ++d) xi[d] = rng.normal();
  const double u = rng.uniform();
  return mala_step(state, dt, target, xi, u, nonfinite);
}

struct MalaResult {
  PosteriorApprox posterior;
  MalaDiagnostics diagnostics;
};

namespace detail {
inline constexpr std::uint64_t kMalaStream = label_of("mala/chain");
inline constexpr std::uint64_t kMalaNoiseStream = label_of("mala/kernel-noise");
}  // namespace detail

/**
 * Runs a single chain of `iters` transitions and keeps the states after the
 * first `warmup`. Targets exposing noisy()/refresh() get fresh estimator
 * noise before every transition, shared by the current and proposed state.
 */
template <class Target>
MalaResult run_mala(const MalaConfig& cfg, Target& target) {
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw ConfigError("MALA dt must be positive");
  if (cfg.iters < 1) throw ConfigError("MALA iters must be positive");
  if (cfg.warmup >= cfg.iters) throw ConfigError("MALA warmup must be smaller than iters");
  constexpr bool has_noise = requires(Target& t, Rng& r) {
    t.noisy();
    t.refresh(r);
  };
  Vector init = cfg.init.size() ? cfg.init : cfg.prior.mean;
  if (!init.allFinite() || init.size() == 0) throw ConfigError("MALA init must be a finite vector");

  Rng rng = Rng::substream(cfg.seed, {detail::kMalaStream});
  Rng noise_rng = Rng::substream(cfg.seed, {detail::kMalaNoiseStream});
  MalaState state{init, {}};
  if constexpr (has_noise) {
    if (target.noisy()) target.refresh(noise_rng);
  }
  if (!detail::evaluate_safely(target, state.theta, state.eval))
    throw NumericError("MALA target is not finite at the initial point " + describe(init));

  MalaResult out;
  out.posterior.provenance = Provenance::MalaChain;
  out.posterior.atoms.resize(static_cast<Eigen::Index>(cfg.iters - cfg.warmup), init.size());
  std::size_t accepted = 0;
  for (std::size_t t = 1; t <= cfg.iters; ++t) {
    if constexpr (has_noise) {
      if (target.noisy()) {
        target.refresh(noise_rng);
        if (!detail::evaluate_safely(target, state.theta, state.eval))
          throw NumericError("MALA target became non-finite at step " + std::to_string(t));
      }
    }
    bool nonfinite = false;
    if (mala_step(state, cfg.dt, target, rng, &nonfinite)) ++accepted;
    if (nonfinite) ++out.diagnostics.nonfinite_rejections;
    if (t > cfg.warmup)
      out.posterior.atoms.row(static_cast<Eigen::Index>(t - cfg.warmup - 1)) = state.theta.transpose();
  }
  out.diagnostics.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.iters);
  out.diagnostics.kept_samples = cfg.iters - cfg.warmup;
  return out;
}

}  // namespace proflow
