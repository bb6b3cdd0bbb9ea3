#pragma once

#include "proflow/core.hpp"

#include <cmath>

namespace proflow {

/// Axis-aligned Gaussian prior N(mean, diag(scale^2)).
struct GaussianPrior {
  Vector mean;
  Vector scale;

  static GaussianPrior standard(std::size_t dim, double scale = 1.0) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Vector::Zero(d), Vector::Constant(d, scale)};
  }

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

  void validate(std::size_t dim) const {
    if (static_cast<std::size_t>(mean.size()) != dim || static_cast<std::size_t>(scale.size()) != dim)
      throw ConfigError("prior dimension does not match the model dimension " + std::to_string(dim));
    if (!mean.allFinite() || !(scale.array() > 0.0).all() || !scale.allFinite())
      throw ConfigError("prior scales must be positive and finite");
  }

  double log_density(const Vector& theta) const {
    const auto z = ((theta - mean).array() / scale.array());
    return -0.5 * z.square().sum() - scale.array().log().sum() - 0.5 * static_cast<double>(mean.size()) * kLog2Pi;
  }

  Vector grad_log_density(const Vector& theta) const {
    return -((theta - mean).array() / scale.array().square()).matrix();
  }

  Vector sample(Rng& rng) const {
    Vector v(mean.size());
    for (Eigen::Index d = 0; d < v.size(); ++d) v[d] = mean[d] + scale[d] * rng.normal();
    return v;
  }
};

}  // namespace proflow
