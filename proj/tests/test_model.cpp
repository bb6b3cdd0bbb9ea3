#include "oracles.hpp"
#include "proflow/proflow.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace proflow;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::size_t i = 0;
  for (double x : v) out[static_cast<Eigen::Index>(i++)] = x;
  return out;
}

// Hand-written densities, one per model, used as the reference.
double ref_log_density(const ModelSpec& m, const Vector& th, const Observation& o) {
  switch (m.variant().index()) {
    case 0:
      return std::log(oracle::normal_pdf(o.response[0], th[0], m.sigma()));
    case 1:
      return std::log(oracle::normal_pdf(o.response[0], th[0], m.sigma())) +
             std::log(oracle::normal_pdf(o.response[1], th[1], m.sigma()));
    case 2:
      return std::log(oracle::normal_pdf(o.response[0], o.covariate.dot(th), m.sigma()));
    case 3: {
      const double p = 1.0 / (1.0 + std::exp(-o.covariate.dot(th)));
      return o.response[0] > 0.5 ? std::log(p) : std::log(1.0 - p);
    }
    default: {
      const double p = 1.0 / (1.0 + std::exp(-(th[0] + th[1] * o.covariate[0])));
      const double t = static_cast<double>(o.counts->tries), s = static_cast<double>(o.counts->successes);
      return std::lgamma(t + 1) - std::lgamma(s + 1) - std::lgamma(t - s + 1) + s * std::log(p) +
             (t - s) * std::log(1.0 - p);
    }
  }
}

std::vector<ModelSpec> models() {
  return {ModelSpec::gaussian_location(1.3), ModelSpec::iso_gaussian_2d(0.7), ModelSpec::linear_regression(3, 1.1),
          ModelSpec::logistic_regression(2), ModelSpec::binomial_logit()};
}

Observation random_obs(const ModelSpec& m, Rng& rng) {
  Vector x(static_cast<Eigen::Index>(m.covariate_dim()));
  for (auto& v : x) v = rng.normal();
  switch (m.variant().index()) {
    case 0:
      return Observation::value(2.0 * rng.normal());
    case 1:
      return Observation::point(vec({rng.normal(), rng.normal()}));
    case 2:
      return Observation::regression(x, 2.0 * rng.normal());
    case 3:
      return Observation::label(x, rng.uniform() < 0.5 ? 1 : 0);
    default: {
      const auto tries = static_cast<std::int64_t>(5 + rng.index(40));
      return Observation::grouped(2.0 + 10.0 * rng.uniform(), tries, static_cast<std::int64_t>(rng.index(tries + 1)));
    }
  }
}

Vector random_theta(const ModelSpec& m, Rng& rng, double scale = 0.5) {
  Vector t(static_cast<Eigen::Index>(m.dim()));
  for (auto& v : t) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST(ModelLogDensity, WorkedValues) {
  EXPECT_NEAR(log_density(ModelSpec::gaussian_location(1.0), Theta{0.0}, Observation::value(0.0)), -0.9189385, 1e-7);
  EXPECT_NEAR(log_density(ModelSpec::logistic_regression(2), Theta{0.0, 0.0}, Observation::label(vec({0.3, -1.7}), 1)),
              -0.6931472, 1e-7);
  EXPECT_NEAR(
      log_density(ModelSpec::linear_regression(2, 1.0), Theta{0.0, 2.0}, Observation::regression(vec({1.0, 1.0}), 2.0)),
      -0.9189385, 1e-7);
}

TEST(ModelLogDensity, MatchesHandWrittenDensities) {
  Rng rng(101);
  for (const auto& m : models())
    for (int t = 0; t < 20; ++t) {
      const Vector th = random_theta(m, rng);
      const Observation o = random_obs(m, rng);
      EXPECT_NEAR(log_density(m, Theta(th), o), ref_log_density(m, th, o), 1e-10) << m.name();
    }
}

TEST(ModelLogDensity, GaussianLocationNormalisesUnderQuadrature) {
  const ModelSpec m = ModelSpec::gaussian_location(0.6);
  const double mass = oracle::simpson(
      [&](double y) { return std::exp(log_density(m, Theta{1.5}, Observation::value(y))); }, 1.5 - 10.0, 1.5 + 10.0, 4000);
  EXPECT_NEAR(mass, 1.0, 1e-10);
}

TEST(ModelLogDensity, BinomialMassesSumToOne) {
  const ModelSpec m = ModelSpec::binomial_logit();
  double total = 0.0;
  for (std::int64_t s = 0; s <= 30; ++s) total += std::exp(log_density(m, Theta{0.4, -0.1}, Observation::grouped(5.0, 30, s)));
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ModelLogDensity, DimensionMismatchIsConfigError) {
  const ModelSpec m = ModelSpec::linear_regression(2, 1.0);
  EXPECT_THROW(log_density(m, Theta{1.0}, Observation::regression(vec({1.0, 1.0}), 0.0)), ConfigError);
  EXPECT_THROW(log_density(m, Theta{1.0, 1.0}, Observation::regression(vec({1.0}), 0.0)), ConfigError);
  EXPECT_THROW(log_density(ModelSpec::binomial_logit(), Theta{0.0, 0.0}, Observation::grouped(2.0, 3, 4)),
               ConfigError);
  EXPECT_THROW(log_density(ModelSpec::logistic_regression(1), Theta{0.0}, Observation::label(vec({1.0}), 2)),
               ConfigError);
  EXPECT_THROW(ModelSpec::gaussian_location(-1.0), ConfigError);
}

TEST(ModelGradLogDensity, WorkedValues) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  EXPECT_DOUBLE_EQ(grad_log_density(m, Theta{0.0}, Observation::value(0.0))[0], 0.0);
  EXPECT_DOUBLE_EQ(grad_log_density(m, Theta{0.0}, Observation::value(2.0))[0], 2.0);
}

TEST(ModelGradLogDensity, MatchesCentralDifferences) {
  Rng rng(202);
  for (const auto& m : models()) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Vector th = random_theta(m, rng);
      const Observation o = random_obs(m, rng);
      const Vector fd = oracle::central_diff([&](const Vector& v) { return ref_log_density(m, v, o); }, th);
      worst = std::max(worst, oracle::rel_err(grad_log_density(m, Theta(th), o), fd));
    }
    EXPECT_LT(worst, 1e-5) << m.name();
  }
}

TEST(ModelSamplePredictive, GaussianLocationMean) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  Rng rng(1);
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s += sample_predictive(m, Theta{5.0}, rng).response[0];
  EXPECT_NEAR(s / n, 5.0, 4.0 / std::sqrt(n));
}

TEST(ModelSamplePredictive, LogisticSymmetric) {
  const ModelSpec m = ModelSpec::logistic_regression(2);
  Rng rng(2);
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += sample_predictive(m, Theta{0.0, 0.0}, vec({0.5, -0.3}), rng).response[0] > 0.5;
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.5, 0.01);
}

TEST(ModelSamplePredictive, RegressionMoments) {
  const ModelSpec m = ModelSpec::linear_regression(2, 1.0);
  Rng rng(3);
  std::vector<double> ys;
  for (int i = 0; i < 100000; ++i) ys.push_back(sample_predictive(m, Theta{0.0, 2.0}, vec({0.0, 1.0}), rng).response[0]);
  const auto ms = oracle::mean_se(ys);
  EXPECT_NEAR(ms.mean, 2.0, 4.0 * ms.se);
  double v = 0.0;
  for (double y : ys) v += (y - ms.mean) * (y - ms.mean);
  v /= static_cast<double>(ys.size() - 1);
  // sd of the sample variance of N(0,1) is sqrt(2/n)
  EXPECT_NEAR(v, 1.0, 4.0 * std::sqrt(2.0 / ys.size()));
}

TEST(ModelSamplePredictive, BinomialMean) {
  const ModelSpec m = ModelSpec::binomial_logit();
  Rng rng(4);
  const double p = 1.0 / (1.0 + std::exp(-(1.0 - 0.2 * 3.0)));
  double s = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) s += static_cast<double>(sample_predictive(m, Theta{1.0, -0.2}, vec({3.0}), rng, 50).counts->successes);
  EXPECT_NEAR(s / n, 50.0 * p, 4.0 * std::sqrt(50.0 * p * (1 - p) / n));
}

TEST(ModelSamplePredictive, SameSeedSameStream) {
  const ModelSpec m = ModelSpec::iso_gaussian_2d(1.0);
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) {
    const auto x = sample_predictive(m, Theta{0.1, -0.2}, a).response;
    const auto y = sample_predictive(m, Theta{0.1, -0.2}, b).response;
    EXPECT_EQ(x[0], y[0]);
    EXPECT_EQ(x[1], y[1]);
  }
}

TEST(ModelSamplePredictive, StreamsDoNotDependOnThreadCount) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  auto draw = [&](std::size_t threads) {
    std::vector<double> out(64);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      Rng r = Rng::substream(9, {i});
      out[i] = sample_predictive(m, Theta{0.0}, r).response[0];
    });
    return out;
  };
  EXPECT_EQ(draw(1), draw(4));
}

TEST(ModelKernel, MeanWorkedValues) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  const double quad0 = oracle::gauss_expect(0.0, 1.0, [](double y) { return oracle::rbf(y, 0.0, 1.0); });
  EXPECT_NEAR(quad0, 1.0 / std::sqrt(2.0), 1e-8);
  EXPECT_NEAR(kernel_mean(m, Theta{0.0}, 1.0, 0.0), quad0, 1e-8);
  EXPECT_NEAR(kernel_mean(m, Theta{0.0}, 1.0, 0.0), 0.7071068, 1e-7);
  EXPECT_NEAR(kernel_mean(m, Theta{3.0}, 1e6, 0.0), 1.0, 1e-6);
  const double quad2 = oracle::gauss_expect(2.0, 1.0, [](double y) { return oracle::rbf(y, 0.0, 1.0); });
  EXPECT_NEAR(kernel_mean(m, Theta{2.0}, 1.0, 0.0), quad2, 1e-8);
  EXPECT_NEAR(kernel_mean(m, Theta{2.0}, 1.0, 0.0), 0.2601300, 1e-7);
}

TEST(ModelKernel, CrossWorkedValues) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  const double quad = oracle::gauss_expect(0.0, 1.0, [](double u) {
    return oracle::gauss_expect(0.0, 1.0, [u](double v) { return oracle::rbf(u, v, 1.0); }, 400);
  }, 400);
  EXPECT_NEAR(kernel_cross(m, Theta{0.0}, Theta{0.0}, 1.0), quad, 1e-7);
  EXPECT_NEAR(quad, 1.0 / std::sqrt(3.0), 1e-7);
  EXPECT_LT(kernel_cross(m, Theta{0.0}, Theta{10.0}, 1.0), 1e-7);
}

TEST(ModelKernel, CrossIsSymmetric) {
  Rng rng(5);
  for (const auto& m : {ModelSpec::gaussian_location(0.8), ModelSpec::iso_gaussian_2d(1.2)})
    for (int t = 0; t < 50; ++t) {
      const Vector a = random_theta(m, rng, 2.0), b = random_theta(m, rng, 2.0);
      const double g = 0.2 + rng.uniform();
      EXPECT_EQ(kernel_cross(m, Theta(a), Theta(b), g), kernel_cross(m, Theta(b), Theta(a), g));
    }
}

TEST(ModelKernel, FarSeparatedCrossAgainstMonteCarlo) {
  const ModelSpec m = ModelSpec::gaussian_location(1.0);
  Rng rng(6);
  std::vector<double> ks;
  for (int i = 0; i < 1000000; ++i) ks.push_back(oracle::rbf(rng.normal(), 10.0 + rng.normal(), 1.0));
  const auto ms = oracle::mean_se(ks);
  EXPECT_NEAR(kernel_cross(m, Theta{0.0}, Theta{10.0}, 1.0), ms.mean, 4.0 * ms.se + 1e-12);
}

TEST(ModelKernel, EmbeddingsAgreeWithMonteCarlo) {
  Rng rng(8);
  const int draws = 1000000;
  for (const auto& m : {ModelSpec::gaussian_location(0.9), ModelSpec::iso_gaussian_2d(1.1),
                        ModelSpec::linear_regression(2, 0.7)}) {
    for (int c = 0; c < 10; ++c) {
      const Vector a = random_theta(m, rng, 1.0), b = random_theta(m, rng, 1.0);
      const double gamma = 0.5 + rng.uniform();
      Vector x(static_cast<Eigen::Index>(m.covariate_dim()));
      for (auto& v : x) v = rng.normal();
      const Observation site = sample_predictive(m, Theta(a), x, rng);
      std::vector<double> km, kc;
      km.reserve(draws);
      kc.reserve(draws);
      for (int i = 0; i < draws; ++i) {
        const Vector y1 = sample_predictive(m, Theta(a), x, rng).response;
        const Vector y2 = sample_predictive(m, Theta(b), x, rng).response;
        km.push_back(std::exp(-(y1 - site.response).squaredNorm() / (2 * gamma * gamma)));
        kc.push_back(std::exp(-(y1 - y2).squaredNorm() / (2 * gamma * gamma)));
      }
      const auto mm = oracle::mean_se(km), mc = oracle::mean_se(kc);
      EXPECT_NEAR(kernel_mean(m, Theta(a), gamma, site.response, x), mm.mean, 4.0 * mm.se) << m.name();
      EXPECT_NEAR(kernel_cross(m, Theta(a), Theta(b), gamma, x), mc.mean, 4.0 * mc.se) << m.name();
    }
  }
}

TEST(ModelKernel, UnsupportedModelsExplainTheMonteCarloPath) {
  try {
    kernel_mean(ModelSpec::logistic_regression(2), Theta{0.0, 0.0}, 1.0, Vector::Zero(1), vec({1.0, 1.0}));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("Monte"), std::string::npos);
  }
  EXPECT_THROW(kernel_mean(ModelSpec::gaussian_location(1.0), Theta{0.0}, 0.0, 0.0), ConfigError);
}

TEST(ModelOls, RecoversNoiseScale) {
  Rng rng(10);
  std::vector<Observation> rows;
  for (int i = 0; i < 20000; ++i) {
    const Vector x = vec({rng.normal(), rng.normal()});
    rows.push_back(Observation::regression(x, 0.5 * x[0] - x[1] + 1.7 * rng.normal()));
  }
  EXPECT_NEAR(ols_sigma(rows), 1.7, 0.03);
}

TEST(ModelDensitySup, ModelDerivedBounds) {
  EXPECT_NEAR(ModelSpec::gaussian_location(1.0).density_sup(), 1.0 / std::sqrt(2.0 * M_PI), 1e-15);
  EXPECT_NEAR(ModelSpec::iso_gaussian_2d(0.5).density_sup(), 1.0 / (2.0 * M_PI * 0.25), 1e-14);
  EXPECT_EQ(ModelSpec::logistic_regression(2).density_sup(), 1.0);
  EXPECT_EQ(ModelSpec::binomial_logit().density_sup(), 1.0);
}
