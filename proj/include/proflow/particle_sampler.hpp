#pragma once

#include "proflow/model.hpp"
#include "proflow/prior.hpp"
#include "proflow/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace proflow {

enum class Provenance { WgfAverage, MalaChain };

/// Uniformly weighted atoms on the parameter space, one atom per row.
struct PosteriorApprox {
  Matrix atoms;
  Provenance provenance = Provenance::WgfAverage;

  std::size_t size() const { return static_cast<std::size_t>(atoms.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(atoms.cols()); }
  double weight() const { return 1.0 / static_cast<double>(size()); }
  Theta atom(std::size_t i) const { return Theta(Vector(atoms.row(static_cast<Eigen::Index>(i)).transpose())); }
};

/// p particles (rows of `positions`). `labels` name each particle's random
/// substream, so relabelled clouds evolve identically.
struct ParticleCloud {
  Matrix positions;
  std::vector<std::uint64_t> labels;
  std::size_t step_index = 0;

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
};

struct TrajectoryLog {
  std::size_t stride = 10;
  std::vector<std::size_t> snapshot_steps;
  std::vector<Matrix> snapshots;
  // one entry per step
  std::vector<double> mean_interaction_grad_norm;
  std::vector<double> mean_prior_grad_norm;
};

struct InitFromPrior {};
struct InitAtPoint {
  Vector point;
  double jitter = 0.0;
};
using InitSpec = std::variant<InitFromPrior, InitAtPoint>;

struct SamplerConfig {
  double lambda_n = 1.0;
  std::optional<std::size_t> k;  // must agree with the loss order when set
  std::size_t particles = 32;
  Vector dt = Vector::Constant(1, 1e-3);  // length 1 or model dim
  std::size_t iters = 1000;
  std::optional<std::size_t> burn_in;       // default iters / 2
  std::optional<std::size_t> subset_batch;  // default: exhaustive for k = 2, else min(p - 1, 16)
  std::size_t stride = 10;
  std::uint64_t seed = 0;
  GaussianPrior prior;
  InitSpec init = InitFromPrior{};
  std::size_t threads = 1;  // execution detail only; results never depend on it
};

struct StepDiagnostics {
  double mean_interaction_grad_norm = 0.0;
  double mean_prior_grad_norm = 0.0;
};

struct WgfResult {
  PosteriorApprox posterior;
  TrajectoryLog trajectory;
};

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

namespace detail {

inline constexpr std::uint64_t kMoveStream = label_of("wgf/move");
inline constexpr std::uint64_t kNoiseStream = label_of("wgf/kernel-noise");
inline constexpr std::uint64_t kInitStream = label_of("wgf/init");

/**
 * Gradient of the symmetrised data-averaged loss for one particle against
 * subsets of the others. prepare() caches per-(particle, datum) quantities
 * for a frozen cloud; grad() then only reads them, so particles may be
 * processed concurrently.
 */
class InteractionField {
 public:
  InteractionField(const ModelSpec& model, const LossSpec& loss, std::span<const Observation> data)
      : model_(model), loss_(loss), data_(data), n_(data.size()), n_eff_(effective_count(data)) {
    if (data.empty()) throw ConfigError("interaction gradient needs a nonempty dataset");
    loss.validate_for(model);
    for (const auto& o : data) check_observation(model, o);
    shared_eta_ = !model.conditional();
    if (loss.kernel()) {
      gamma_ = loss.kernel_spec().lengthscale;
      sigma_ = model.sigma();
    }
    if (auto* di = std::get_if<LossSpec::LogDI>(&loss.variant())) u_ = di->density_sup;
  }

  void prepare(const Matrix& positions, const std::vector<KernelNoise>& noise, std::size_t threads) {
    p_ = static_cast<std::size_t>(positions.rows());
    noise_ = &noise;
    if (loss_.mc_samples() > 0 && noise.size() != p_)
      throw ConfigError("Monte Carlo kernel loss needs one noise block per particle");
    eta_.resize(p_ * n_);
    const bool log_loss = !loss_.kernel();
    if (log_loss) {
      units_.resize(p_ * n_);
      prob_.resize(p_ * n_);
    } else {
      km_.resize(p_ * n_);
      dkm_.resize(p_ * n_);
    }
    parallel_for(p_, threads, [&](std::size_t j) {
      const Vector theta = positions.row(static_cast<Eigen::Index>(j)).transpose();
      for (std::size_t i = 0; i < n_; ++i) {
        const std::size_t at = j * n_ + i;
        const Observation& obs = data_[i];
        eta_[at] = predictor(model_, theta, obs);
        if (log_loss) {
          units_[at] = unit_evals(model_, eta_[at], obs);
          for (std::size_t u = 0; u < units_[at].count; ++u) prob_[at][u] = std::exp(units_[at].unit[u].logp);
        } else {
          dkm_[at] = {0.0, 0.0};
          km_[at] = loss_.mc_samples() == 0
                        ? embedding::mean(eta_[at], obs.response.data(), sigma_, gamma_, dkm_[at].data())
                        : mc_mean(eta_[at], obs.response.data(), sigma_, gamma_, noise[j], dkm_[at].data());
        }
      }
    });
    if (std::holds_alternative<LossSpec::LogDI>(loss_.variant())) {
      prob_sum_.assign(n_, {0.0, 0.0});
      for (std::size_t j = 0; j < p_; ++j)
        for (std::size_t i = 0; i < n_; ++i)
          for (std::size_t u = 0; u < 2; ++u) prob_sum_[i][u] += prob_[j * n_ + i][u];
    }
  }

  /**
   * (1/M) sum over subsets of grad_theta_j (1/n) sum_i L_sym(theta_j, subset, x_i).
   * `subsets` holds M consecutive groups of `subset_size` particle indices;
   * `exhaustive` marks the full pairing against every other particle.
   */
  Vector grad(std::size_t j, std::span<const std::size_t> subsets, std::size_t subset_size, bool exhaustive) const {
    const std::size_t batches = subset_size == 0 ? 1 : subsets.size() / subset_size;
    const double inv_m = 1.0 / static_cast<double>(batches);
    std::vector<std::array<double, 2>> acc(n_, {0.0, 0.0});
    const std::size_t base = j * n_;

    switch (loss_.variant().index()) {
      case 0: {  // kernel tandem
        for (std::size_t i = 0; i < n_; ++i) acc[i] = {-dkm_[base + i][0], -dkm_[base + i][1]};
        const std::size_t rows = shared_eta_ ? 1 : n_;
        std::vector<std::array<double, 2>> cross(rows, {0.0, 0.0});
        for (std::size_t l : subsets)
          for (std::size_t i = 0; i < rows; ++i) {
            double g[2] = {0.0, 0.0};
            if (loss_.mc_samples() == 0)
              embedding::cross(eta_[base + i], eta_[l * n_ + i], sigma_, gamma_, g);
            else
              mc_cross(eta_[base + i], eta_[l * n_ + i], sigma_, gamma_, (*noise_)[j], (*noise_)[l], g);
            cross[i][0] += g[0];
            cross[i][1] += g[1];
          }
        for (std::size_t i = 0; i < n_; ++i) {
          const auto& c = cross[shared_eta_ ? 0 : i];
          acc[i][0] += inv_m * c[0];
          acc[i][1] += inv_m * c[1];
        }
        break;
      }
      case 1:  // kernel Gibbs
        for (std::size_t i = 0; i < n_; ++i) acc[i] = {-2.0 * dkm_[base + i][0], -2.0 * dkm_[base + i][1]};
        break;
      case 2: {  // DI: linear in the partner's density, so only its mean matters
        for (std::size_t i = 0; i < n_; ++i) {
          const UnitEvals& a = units_[base + i];
          for (std::size_t u = 0; u < a.count; ++u) {
            const double pj = prob_[base + i][u];
            double partner;
            if (exhaustive) {
              partner = (prob_sum_[i][u] - pj) / static_cast<double>(p_ - 1);
            } else {
              partner = 0.0;
              for (std::size_t l : subsets) partner += prob_[l * n_ + i][u];
              partner *= inv_m;
            }
            const auto& ua = a.unit[u];
            for (std::size_t d = 0; d < 2; ++d)
              acc[i][d] += ua.weight * 0.5 * (-ua.dlogp[d] - 2.0 * (pj - partner) * pj * ua.dlogp[d] / u_);
          }
        }
        break;
      }
      case 3: {  // MS
        if (subset_size == 1) {
          // pairwise mixture weight of slot one is sigmoid(logp_j - logp_l)
          for (std::size_t l : subsets)
            for (std::size_t i = 0; i < n_; ++i) {
              const UnitEvals& a = units_[base + i];
              const UnitEvals& b = units_[l * n_ + i];
              for (std::size_t u = 0; u < a.count; ++u) {
                const double w = sigmoid(a.unit[u].logp - b.unit[u].logp);
                const double c = inv_m * a.unit[u].weight * w;
                acc[i][0] -= c * a.unit[u].dlogp[0];
                acc[i][1] -= c * a.unit[u].dlogp[1];
              }
            }
          break;
        }
        std::vector<const UnitEvals*> slots(subset_size + 1);
        for (std::size_t i = 0; i < n_; ++i) {
          slots[0] = &units_[base + i];
          for (std::size_t b = 0; b < batches; ++b) {
            for (std::size_t s = 0; s < subset_size; ++s) slots[s + 1] = &units_[subsets[b * subset_size + s] * n_ + i];
            double g[2] = {0.0, 0.0};
            ms(slots, g);
            acc[i][0] += inv_m * g[0];
            acc[i][1] += inv_m * g[1];
          }
        }
        break;
      }
      default:  // plain log score
        for (std::size_t i = 0; i < n_; ++i) {
          const UnitEvals& a = units_[base + i];
          for (std::size_t u = 0; u < a.count; ++u)
            for (std::size_t d = 0; d < 2; ++d) acc[i][d] -= a.unit[u].weight * a.unit[u].dlogp[d];
        }
    }

    Vector g = Vector::Zero(static_cast<Eigen::Index>(model_.dim()));
    for (std::size_t i = 0; i < n_; ++i) add_design_transpose(model_, data_[i], acc[i], g);
    return g / n_eff_;
  }

 private:
  const ModelSpec& model_;
  const LossSpec& loss_;
  std::span<const Observation> data_;
  std::size_t n_;
  double n_eff_;
  std::size_t p_ = 0;
  bool shared_eta_ = false;
  double gamma_ = 1.0, sigma_ = 1.0, u_ = 1.0;
  const std::vector<KernelNoise>* noise_ = nullptr;
  std::vector<Predictor> eta_;
  std::vector<UnitEvals> units_;
  std::vector<std::array<double, 2>> prob_;
  std::vector<std::array<double, 2>> prob_sum_;
  std::vector<double> km_;
  std::vector<std::array<double, 2>> dkm_;
};

}  // namespace detail

/**
 * (1/n) sum_i L_sym(particle, others, x_i), evaluated through the public loss
 * functions. `noise` supplies one frozen block per slot for Monte Carlo
 * kernel losses (particle first).
 */
inline double sym_interaction_value(const LossSpec& loss, const ModelSpec& model, std::span<const Observation> data,
                                    const Theta& particle, std::span<const Theta> others,
                                    const std::vector<KernelNoise>& noise = {}) {
  if (others.size() + 1 != loss.order())
    throw ConfigError("sym_interaction_value: expected " + std::to_string(loss.order() - 1) + " partner particles");
  if (data.empty()) throw ConfigError("sym_interaction_value: empty dataset");
  loss.validate_for(model);
  const KernelNoise empty;
  auto z = [&](std::size_t s) -> const KernelNoise& { return s < noise.size() ? noise[s] : empty; };
  double total = 0.0;
  for (const auto& obs : data) {
    switch (loss.variant().index()) {
      case 0:
        total += tandem_loss_mmd(model, particle, others[0], obs, loss, z(0), z(1)).value;
        break;
      case 1:
        total += gibbs_loss_mmd(model, particle, obs, loss, z(0)).value;
        break;
      case 2: {
        const double u = std::get<LossSpec::LogDI>(loss.variant()).density_sup;
        total += 0.5 * (loss_di_log(model, particle, others[0], obs, u).value +
                        loss_di_log(model, others[0], particle, obs, u).value);
        break;
      }
      case 3: {
        std::vector<Theta> all{particle};
        all.insert(all.end(), others.begin(), others.end());
        total += loss_ms_log(model, all, obs).value;
        break;
      }
      default:
        total -= log_density(model, particle, obs);
    }
  }
  return total / effective_count(data);
}

/// Gradient in `particle` of sym_interaction_value.
inline Vector sym_interaction_grad(const LossSpec& loss, const ModelSpec& model, std::span<const Observation> data,
                                   const Theta& particle, std::span<const Theta> others,
                                   const std::vector<KernelNoise>& noise = {}) {
  if (others.size() + 1 != loss.order())
    throw ConfigError("sym_interaction_grad: expected " + std::to_string(loss.order() - 1) + " partner particles");
  check_theta(model, particle.values());
  Matrix positions(static_cast<Eigen::Index>(others.size() + 1), static_cast<Eigen::Index>(model.dim()));
  positions.row(0) = particle.values().transpose();
  for (std::size_t s = 0; s < others.size(); ++s) {
    check_theta(model, others[s].values());
    positions.row(static_cast<Eigen::Index>(s + 1)) = others[s].values().transpose();
  }
  detail::InteractionField field(model, loss, data);
  field.prepare(positions, noise, 1);
  std::vector<std::size_t> subset(others.size());
  std::iota(subset.begin(), subset.end(), std::size_t{1});
  return field.grad(0, subset, others.size(), false);
}

/// Draws kernel noise for every slot from `rng` and returns the gradient.
inline Vector sym_interaction_grad(const LossSpec& loss, const ModelSpec& model, std::span<const Observation> data,
                                   const Theta& particle, std::span<const Theta> others, Rng& rng) {
  std::vector<KernelNoise> noise;
  if (loss.mc_samples() > 0)
    for (std::size_t s = 0; s <= others.size(); ++s)
      noise.push_back(draw_kernel_noise(loss.mc_samples(), model.response_dim(), rng));
  return sym_interaction_grad(loss, model, data, particle, others, noise);
}

namespace detail {

struct ResolvedSampler {
  std::size_t k = 2;
  std::size_t batches = 1;
  bool exhaustive = false;
  std::size_t burn_in = 0;
  Vector dt;
};

inline ResolvedSampler resolve(const SamplerConfig& cfg, const LossSpec& loss, const ModelSpec& model,
                               std::span<const Observation> data) {
  ResolvedSampler r;
  r.k = loss.order();
  if (cfg.k && *cfg.k != r.k)
    throw ConfigError("sampler k = " + std::to_string(*cfg.k) + " does not match the order " + std::to_string(r.k) +
                      " of loss " + loss.name());
  if (cfg.particles < 2) throw ConfigError("sampler needs at least 2 particles");
  if (r.k > cfg.particles) throw ConfigError("interaction order k exceeds the particle count");
  if (!(cfg.lambda_n >= 0.0) || !std::isfinite(cfg.lambda_n)) throw ConfigError("lambda_n must be >= 0");
  if (cfg.iters < 1) throw ConfigError("iters must be positive");
  if (cfg.stride < 1) throw ConfigError("snapshot stride must be positive");
  r.burn_in = cfg.burn_in.value_or(cfg.iters / 2);
  if (r.burn_in >= cfg.iters) throw ConfigError("burn-in must be smaller than iters");
  const auto dim = static_cast<Eigen::Index>(model.dim());
  if (cfg.dt.size() == 1)
    r.dt = Vector::Constant(dim, cfg.dt[0]);
  else if (cfg.dt.size() == dim)
    r.dt = cfg.dt;
  else
    throw ConfigError("dt must have length 1 or the model dimension");
  if (!(r.dt.array() >= 0.0).all() || !r.dt.allFinite()) throw ConfigError("dt must be nonnegative");
  cfg.prior.validate(model.dim());
  if (auto* at = std::get_if<InitAtPoint>(&cfg.init); at && at->point.size() != dim)
    throw ConfigError("init point has the wrong dimension");
  if (data.empty()) throw ConfigError("sampler needs a nonempty dataset");
  loss.validate_for(model);

  const double available = binomial_coefficient(cfg.particles - 1, r.k - 1);
  if (r.k == 1) {
    r.batches = 1;
    r.exhaustive = true;
  } else {
    const double fallback = r.k == 2 ? available : std::min<double>(16.0, available);
    const double m = cfg.subset_batch ? static_cast<double>(*cfg.subset_batch) : fallback;
    if (m < 1.0) throw ConfigError("subset batch must be positive");
    if (m > available)
      throw ConfigError("subset batch M exceeds the number of distinct (k-1)-subsets of the other particles");
    r.batches = static_cast<std::size_t>(m);
    r.exhaustive = m == available;
  }
  return r;
}

// Writes every (k-1)-subset of {0..p-1} \ {j} into out.
inline void enumerate_subsets(std::size_t p, std::size_t j, std::size_t size, std::vector<std::size_t>& out) {
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < p; ++i)
    if (i != j) others.push_back(i);
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t m = others.size();
  while (true) {
    for (auto i : idx) out.push_back(others[i]);
    std::size_t pos = size;
    while (pos > 0 && idx[pos - 1] == m - size + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t q = pos; q < size; ++q) idx[q] = idx[q - 1] + 1;
  }
}

// Draws `batches` uniform (k-1)-subsets of the other particles. Candidates are
// visited in `order` (row indices sorted by particle label), so a relabelled
// cloud picks the same partners.
inline void sample_subsets(std::span<const std::size_t> order, std::size_t j, std::size_t size, std::size_t batches,
                           Rng& rng, std::vector<std::size_t>& out) {
  std::vector<std::size_t> others;
  for (std::size_t b = 0; b < batches; ++b) {
    others.clear();
    for (std::size_t i : order)
      if (i != j) others.push_back(i);
    for (std::size_t s = 0; s < size; ++s) {
      const std::size_t pick = s + rng.index(others.size() - s);
      std::swap(others[s], others[pick]);
      out.push_back(others[s]);
    }
  }
}

inline void advance(InteractionField& field, ParticleCloud& cloud, const SamplerConfig& cfg,
                    const ResolvedSampler& r, const ModelSpec& model, const LossSpec& loss,
                    StepDiagnostics* diag) {
  const std::size_t p = cloud.size();
  const std::size_t t = cloud.step_index;
  const bool interact = cfg.lambda_n > 0.0;
  std::vector<KernelNoise> noise;
  if (interact && loss.mc_samples() > 0) {
    noise.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
      Rng rng = Rng::substream(cfg.seed, {kNoiseStream, t, cloud.labels[j]});
      noise[j] = draw_kernel_noise(loss.mc_samples(), model.response_dim(), rng);
    }
  }
  if (interact) field.prepare(cloud.positions, noise, cfg.threads);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cloud.labels[a] < cloud.labels[b]; });

  Matrix next(cloud.positions.rows(), cloud.positions.cols());
  std::vector<double> inter_norm(p, 0.0), prior_norm(p, 0.0);
  const double scale = cfg.lambda_n * static_cast<double>(r.k);
  const Vector noise_scale = (2.0 * r.dt).array().sqrt().matrix();

  parallel_for(p, cfg.threads, [&](std::size_t j) {
    Rng rng = Rng::substream(cfg.seed, {kMoveStream, t, cloud.labels[j]});
    const Vector theta = cloud.positions.row(static_cast<Eigen::Index>(j)).transpose();
    Vector drift = Vector::Zero(theta.size());
    if (interact) {
      std::vector<std::size_t> subsets;
      const std::size_t size = r.k - 1;
      if (size > 0) {
        if (r.exhaustive)
          enumerate_subsets(p, j, size, subsets);
        else
          sample_subsets(order, j, size, r.batches, rng, subsets);
      }
      drift = scale * field.grad(j, subsets, size, r.exhaustive);
      inter_norm[j] = drift.norm();
    }
    const Vector prior_grad = cfg.prior.grad_log_density(theta);
    prior_norm[j] = prior_grad.norm();
    drift -= prior_grad;
    Vector out = theta - r.dt.cwiseProduct(drift);
    for (Eigen::Index d = 0; d < out.size(); ++d) out[d] += noise_scale[d] * rng.normal();
    next.row(static_cast<Eigen::Index>(j)) = out.transpose();
  });

  for (std::size_t j = 0; j < p; ++j) {
    const auto row = next.row(static_cast<Eigen::Index>(j));
    if (!row.allFinite() || row.cwiseAbs().maxCoeff() > 1e6)
      throw NumericError("particle " + std::to_string(j) + " diverged at step " + std::to_string(t + 1) +
                         " (coordinate beyond 1e6 or non-finite); try a smaller dt");
  }
  cloud.positions = std::move(next);
  cloud.step_index = t + 1;
  if (diag) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      a += inter_norm[j];
      b += prior_norm[j];
    }
    diag->mean_interaction_grad_norm = a / static_cast<double>(p);
    diag->mean_prior_grad_norm = b / static_cast<double>(p);
  }
}

}  // namespace detail

inline ParticleCloud initialize_cloud(const SamplerConfig& cfg, std::size_t dim) {
  ParticleCloud cloud;
  cloud.positions.resize(static_cast<Eigen::Index>(cfg.particles), static_cast<Eigen::Index>(dim));
  cloud.labels.resize(cfg.particles);
  std::iota(cloud.labels.begin(), cloud.labels.end(), std::uint64_t{0});
  for (std::size_t j = 0; j < cfg.particles; ++j) {
    Rng rng = Rng::substream(cfg.seed, {detail::kInitStream, j});
    Vector v;
    if (auto* at = std::get_if<InitAtPoint>(&cfg.init)) {
      v = at->point;
      for (Eigen::Index d = 0; d < v.size(); ++d) v[d] += at->jitter * rng.normal();
    } else {
      v = cfg.prior.sample(rng);
    }
    cloud.positions.row(static_cast<Eigen::Index>(j)) = v.transpose();
  }
  return cloud;
}

/**
 * One synchronous Euler-Maruyama step of the interacting particle system:
 * theta_j <- theta_j - dt * (lambda k grad L_sym - grad log prior) + sqrt(2 dt) xi.
 * Randomness comes from per-(step, particle label) substreams of cfg.seed.
 */
inline ParticleCloud wgf_step(const ParticleCloud& cloud, const SamplerConfig& cfg, const LossSpec& loss,
                              const ModelSpec& model, std::span<const Observation> data,
                              StepDiagnostics* diag = nullptr) {
  SamplerConfig sized = cfg;
  sized.particles = cloud.size();
  const auto r = detail::resolve(sized, loss, model, data);
  if (static_cast<std::size_t>(cloud.positions.cols()) != model.dim())
    throw ConfigError("cloud dimension does not match the model");
  detail::InteractionField field(model, loss, data);
  ParticleCloud next = cloud;
  if (next.labels.size() != next.size()) {
    next.labels.resize(next.size());
    std::iota(next.labels.begin(), next.labels.end(), std::uint64_t{0});
  }
  detail::advance(field, next, sized, r, model, loss, diag);
  return next;
}

/// Runs the sampler from `start` and averages post-burn-in snapshots.
inline WgfResult run_wgf(const SamplerConfig& cfg, const LossSpec& loss, const ModelSpec& model,
                         std::span<const Observation> data, ParticleCloud start) {
  const auto r = detail::resolve(cfg, loss, model, data);
  if (start.size() != cfg.particles || static_cast<std::size_t>(start.positions.cols()) != model.dim())
    throw ConfigError("initial cloud does not match the sampler configuration");
  detail::InteractionField field(model, loss, data);
  WgfResult out;
  auto& log = out.trajectory;
  log.stride = cfg.stride;
  log.mean_interaction_grad_norm.reserve(cfg.iters);
  log.mean_prior_grad_norm.reserve(cfg.iters);
  log.snapshot_steps.push_back(start.step_index);
  log.snapshots.push_back(start.positions);
  ParticleCloud cloud = std::move(start);
  for (std::size_t t = 1; t <= cfg.iters; ++t) {
    StepDiagnostics diag;
    detail::advance(field, cloud, cfg, r, model, loss, &diag);
    log.mean_interaction_grad_norm.push_back(diag.mean_interaction_grad_norm);
    log.mean_prior_grad_norm.push_back(diag.mean_prior_grad_norm);
    if (t % cfg.stride == 0) {
      log.snapshot_steps.push_back(t);
      log.snapshots.push_back(cloud.positions);
    }
  }
  std::size_t kept = 0;
  for (auto s : log.snapshot_steps) kept += s > r.burn_in ? 1 : 0;
  if (kept == 0) throw ConfigError("no snapshots after burn-in; lower the stride or the burn-in");
  const auto p = static_cast<Eigen::Index>(cfg.particles);
  out.posterior.atoms.resize(static_cast<Eigen::Index>(kept) * p, static_cast<Eigen::Index>(model.dim()));
  out.posterior.provenance = Provenance::WgfAverage;
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < log.snapshots.size(); ++s) {
    if (log.snapshot_steps[s] <= r.burn_in) continue;
    out.posterior.atoms.middleRows(row, p) = log.snapshots[s];
    row += p;
  }
  return out;
}

inline WgfResult run_wgf(const SamplerConfig& cfg, const LossSpec& loss, const ModelSpec& model,
                         std::span<const Observation> data) {
  detail::resolve(cfg, loss, model, data);
  return run_wgf(cfg, loss, model, data, initialize_cloud(cfg, model.dim()));
}

enum class ScheduleMode { ExactOrDI, MsLog };

/// Interaction order k = max(2, round((n / ln n)^(1/3))).
inline std::size_t k_schedule(double n) {
  if (!(n >= 2.0)) throw ConfigError("k_schedule needs n >= 2");
  const double k = std::round(std::cbrt(n / std::log(n)));
  return static_cast<std::size_t>(std::max(2.0, k));
}

/// lambda_n = sqrt(n) / ln n for exact and DI scores; sqrt(n / (k ln k)) for
/// MS log scores with k from k_schedule and ln k floored at 1.
inline double lambda_schedule(double n, ScheduleMode mode) {
  if (!(n >= 2.0)) throw ConfigError("lambda_schedule needs n >= 2");
  if (mode == ScheduleMode::ExactOrDI) return std::sqrt(n) / std::log(n);
  const double k = static_cast<double>(k_schedule(n));
  return std::sqrt(n / (k * std::max(std::log(k), 1.0)));
}

}  // namespace proflow
