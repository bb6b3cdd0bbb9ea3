#include "oracles.hpp"
#include "proflow/proflow.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace proflow;

namespace {

const ModelSpec kStd = ModelSpec::gaussian_location(1.0);

double pdf(double y, double mu) { return oracle::normal_pdf(y, mu, 1.0); }

}  // namespace

TEST(ScoringMedianHeuristic, WorkedValues) {
  const std::vector<double> three{0.0, 1.0, 2.0};
  EXPECT_NEAR(median_heuristic(std::span<const double>(three)).lengthscale, 0.7071068, 1e-7);
  const std::vector<double> same{3.0, 3.0, 3.0};
  EXPECT_EQ(median_heuristic(std::span<const double>(same)).lengthscale, 1e-6);
  Matrix pts(2, 2);
  pts << 0.0, 0.0, 3.0, 4.0;
  EXPECT_NEAR(median_heuristic(pts).lengthscale, 3.5355339, 1e-7);
}

TEST(ScoringMedianHeuristic, EvenCountTakesLowerMiddle) {
  // squared distances {1, 4, 9, 1, 4, 1}: sorted 1 1 1 4 4 9, lower middle is 1
  const std::vector<double> v{0.0, 1.0, 2.0, 3.0};
  EXPECT_NEAR(median_heuristic(std::span<const double>(v)).lengthscale, std::sqrt(0.5), 1e-15);
}

TEST(ScoringMedianHeuristic, NeedsTwoPoints) {
  const std::vector<double> one{1.0};
  EXPECT_THROW(median_heuristic(std::span<const double>(one)), ConfigError);
}

TEST(ScoringTandem, WorkedValueAndSymmetricGradient) {
  const LossSpec loss = LossSpec::kernel_tandem(KernelSpec(1.0));
  Rng rng(1);
  const auto e = tandem_loss_mmd(kStd, Theta{0.0}, Theta{0.0}, Observation::value(0.0), loss, rng);
  EXPECT_NEAR(e.value, 1.0 / std::sqrt(3.0) - 2.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(e.value, -0.8368633, 1e-7);
  EXPECT_NEAR(e.grad_first[0], 0.0, 1e-15);
}

TEST(ScoringTandem, MonteCarloIsUnbiasedForClosedForm) {
  // Replicates of the m = 10 estimator; the average over 10^4 replicates has
  // the same expectation as one m = 10^5 estimate.
  Rng rng(2);
  for (int c = 0; c < 10; ++c) {
    const double gamma = 0.5 + rng.uniform();
    const Theta a{rng.normal()}, b{rng.normal()};
    const Observation y = Observation::value(rng.normal());
    const LossSpec mc = LossSpec::kernel_tandem(KernelSpec(gamma), MonteCarlo{10});
    const double exact = tandem_loss_mmd(kStd, a, b, y, LossSpec::kernel_tandem(KernelSpec(gamma)), rng).value;
    std::vector<double> reps;
    for (int r = 0; r < 10000; ++r) reps.push_back(tandem_loss_mmd(kStd, a, b, y, mc, rng).value);
    const auto ms = oracle::mean_se(reps);
    EXPECT_NEAR(ms.mean, exact, 4.0 * ms.se);
  }
}

TEST(ScoringTandem, ClosedFormAgainstQuadrature) {
  Rng rng(3);
  for (int c = 0; c < 5; ++c) {
    const double g = 0.4 + rng.uniform();
    const double a = rng.normal(), b = rng.normal(), y = rng.normal();
    const double cross = oracle::gauss_expect(a, 1.0, [&](double u) {
      return oracle::gauss_expect(b, 1.0, [&](double v) { return oracle::rbf(u, v, g); }, 400);
    }, 400);
    const double ma = oracle::gauss_expect(a, 1.0, [&](double u) { return oracle::rbf(u, y, g); });
    const double mb = oracle::gauss_expect(b, 1.0, [&](double u) { return oracle::rbf(u, y, g); });
    const auto e = tandem_loss_mmd(kStd, Theta{a}, Theta{b}, Observation::value(y),
                                   LossSpec::kernel_tandem(KernelSpec(g)), rng);
    EXPECT_NEAR(e.value, cross - ma - mb, 1e-7);
  }
}

TEST(ScoringGibbsMmd, WorkedValue) {
  Rng rng(4);
  const auto e = gibbs_loss_mmd(kStd, Theta{0.0}, Observation::value(0.0), LossSpec::kernel_gibbs(KernelSpec(1.0)), rng);
  EXPECT_NEAR(e.value, -0.8368633, 1e-7);
}

TEST(ScoringGibbsMmd, MinimisedAtTheObservation) {
  Rng rng(5);
  const LossSpec loss = LossSpec::kernel_gibbs(KernelSpec(1.0));
  double best = 1e300, arg = 0.0;
  const double step = 0.01;
  for (int i = -300; i <= 300; ++i) {
    const double th = i * step;
    const double v = gibbs_loss_mmd(kStd, Theta{th}, Observation::value(0.0), loss, rng).value;
    if (v < best) best = v, arg = th;
  }
  EXPECT_NEAR(arg, 0.0, step);
}

TEST(ScoringGibbsMmd, MonteCarloUnbiased) {
  Rng rng(6);
  const LossSpec mc = LossSpec::kernel_gibbs(KernelSpec(0.8), MonteCarlo{32});
  const double exact =
      gibbs_loss_mmd(kStd, Theta{0.3}, Observation::value(-0.4), LossSpec::kernel_gibbs(KernelSpec(0.8)), rng).value;
  std::vector<double> reps;
  for (int r = 0; r < 10000; ++r) reps.push_back(gibbs_loss_mmd(kStd, Theta{0.3}, Observation::value(-0.4), mc, rng).value);
  const auto ms = oracle::mean_se(reps);
  EXPECT_NEAR(ms.mean, exact, 4.0 * ms.se);
}

TEST(ScoringKernel, DivergenceIsProper) {
  // D(P_a, P_b) = E_{Y~P_b}[S(P_a, Y) - S(P_b, Y)] = MMD^2 via the embeddings.
  const double g = 0.9;
  for (double b = -2.0; b <= 2.0; b += 0.5)
    for (double a = -2.0; a <= 2.0; a += 0.05) {
      const double d = kernel_cross(kStd, Theta{a}, Theta{a}, g) + kernel_cross(kStd, Theta{b}, Theta{b}, g) -
                       2.0 * kernel_cross(kStd, Theta{a}, Theta{b}, g);
      if (std::abs(a - b) < 1e-12) EXPECT_EQ(d, 0.0);
      if (std::abs(a - b) > 0.1) EXPECT_GT(d, 0.0);
    }
}

TEST(ScoringKernel, RejectsNonGaussianModels) {
  Rng rng(7);
  EXPECT_THROW(tandem_loss_mmd(ModelSpec::binomial_logit(), Theta{0.0, 0.0}, Theta{0.0, 0.0},
                               Observation::grouped(2.0, 3, 1), LossSpec::kernel_tandem(KernelSpec(1.0)), rng),
               ConfigError);
  EXPECT_THROW(LossSpec::kernel_tandem(KernelSpec(1.0)).validate_for(ModelSpec::logistic_regression(2)), ConfigError);
}

TEST(ScoringDI, EqualParametersReduceToLogScore) {
  const auto e = loss_di_log(kStd, Theta{0.4}, Theta{0.4}, Observation::value(1.1), kStd.density_sup());
  EXPECT_NEAR(e.value, -std::log(pdf(1.1, 0.4)), 1e-14);
}

TEST(ScoringDI, WorkedValue) {
  const double u = 1.0 / std::sqrt(2.0 * M_PI);
  const auto e = loss_di_log(kStd, Theta{0.0}, Theta{1.0}, Observation::value(0.0), u);
  const double p1 = pdf(0.0, 0.0), p2 = pdf(0.0, 1.0);
  EXPECT_NEAR(e.value, -std::log(p1) - (p1 - p2) * (p1 - p2) / (2.0 * u), 1e-14);
  EXPECT_NEAR(e.value, 0.8880568, 1e-7);
}

TEST(ScoringDI, GradientMatchesCentralDifferences) {
  Rng rng(8);
  for (const auto& m : {ModelSpec::gaussian_location(0.8), ModelSpec::logistic_regression(2)}) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      Vector x(static_cast<Eigen::Index>(m.covariate_dim()));
      for (auto& v : x) v = rng.normal();
      const Observation o = m.conditional() ? Observation::label(x, rng.uniform() < 0.5) : Observation::value(rng.normal());
      Vector a(static_cast<Eigen::Index>(m.dim())), b(a.size());
      for (auto& v : a) v = rng.normal();
      for (auto& v : b) v = rng.normal();
      const auto f = [&](const Vector& v) { return loss_di_log(m, Theta(v), Theta(b), o, m.density_sup()).value; };
      worst = std::max(worst, oracle::rel_err(loss_di_log(m, Theta(a), Theta(b), o, m.density_sup()).grad_first,
                                              oracle::central_diff(f, a)));
    }
    EXPECT_LT(worst, 1e-4) << m.name();
  }
}

TEST(ScoringDI, NonPositiveBoundIsConfigError) {
  EXPECT_THROW(loss_di_log(kStd, Theta{0.0}, Theta{1.0}, Observation::value(0.0), 0.0), ConfigError);
  EXPECT_THROW(LossSpec::log_di(0.1).validate_for(kStd), ConfigError);
}

TEST(ScoringMS, SingleComponentIsLogScore) {
  const std::vector<Theta> one{Theta{0.7}};
  EXPECT_NEAR(loss_ms_log(kStd, one, Observation::value(-0.2)).value, -std::log(pdf(-0.2, 0.7)), 1e-14);
}

TEST(ScoringMS, PermutationInvariant) {
  std::vector<Theta> t{Theta{0.1}, Theta{-1.3}, Theta{2.2}, Theta{0.9}};
  const double base = loss_ms_log(kStd, t, Observation::value(0.5)).value;
  std::sort(t.begin(), t.end(), [](const Theta& a, const Theta& b) { return a[0] < b[0]; });
  do {
    EXPECT_EQ(loss_ms_log(kStd, t, Observation::value(0.5)).value, base);
  } while (std::next_permutation(t.begin(), t.end(), [](const Theta& a, const Theta& b) { return a[0] < b[0]; }));
}

TEST(ScoringMS, EqualPairGradientIsHalfTheScore) {
  const std::vector<Theta> t{Theta{0.3}, Theta{0.3}};
  const auto e = loss_ms_log(kStd, t, Observation::value(1.0));
  EXPECT_NEAR(e.value, -std::log(pdf(1.0, 0.3)), 1e-14);
  EXPECT_NEAR(e.grad_first[0], -0.5 * (1.0 - 0.3), 1e-14);
  const auto f = [&](const Vector& v) {
    const std::vector<Theta> s{Theta(v), Theta{0.3}};
    return loss_ms_log(kStd, s, Observation::value(1.0)).value;
  };
  EXPECT_LT(oracle::rel_err(e.grad_first, oracle::central_diff(f, Vector::Constant(1, 0.3))), 1e-6);
}

TEST(ScoringMS, FarTailsStayFinite) {
  const std::vector<Theta> t{Theta{0.0}, Theta{50.0}};
  const auto e = loss_ms_log(kStd, t, Observation::value(100.0));
  EXPECT_TRUE(std::isfinite(e.value));
  // log p(100 | 50) = -1250 - log sqrt(2 pi); the density itself underflows
  EXPECT_NEAR(e.value, std::log(2.0) + 1250.0 + 0.5 * std::log(2.0 * M_PI), 1e-9);
}

TEST(ScoringExact, SingleAtomLogScore) {
  const std::vector<Theta> a{Theta{0.2}};
  const std::vector<double> w{1.0};
  EXPECT_NEAR(exact_predictive_score_discrete(kStd, a, w, Observation::value(1.0), LogScoreRule{}),
              -log_density(kStd, a[0], Observation::value(1.0)), 1e-15);
}

TEST(ScoringExact, MmdMatchesDoubleSumOfEmbeddings) {
  Rng rng(9);
  const double g = 0.8;
  std::vector<Theta> a;
  std::vector<double> w;
  for (int j = 0; j < 5; ++j) {
    a.emplace_back(Theta{2.0 * rng.normal()});
    w.push_back(0.2);
  }
  const double y = 0.3;
  long double ref = 0.0L;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j)
      ref += 0.04L * std::exp(-0.5 * std::pow(a[i][0] - a[j][0], 2) / (g * g + 2.0)) * std::sqrt(g * g / (g * g + 2.0));
    ref -= 0.4L * std::exp(-0.5 * std::pow(a[i][0] - y, 2) / (g * g + 1.0)) * std::sqrt(g * g / (g * g + 1.0));
  }
  const double got = exact_predictive_score_discrete(kStd, a, w, Observation::value(y), MmdScoreRule{KernelSpec(g)});
  EXPECT_NEAR(got, static_cast<double>(ref), 1e-12);
}

TEST(ScoringExact, TandemIdentity) {
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + rng.index(5);
    std::vector<Theta> a;
    std::vector<double> w;
    double tot = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      a.emplace_back(Theta{2.0 * rng.normal()});
      w.push_back(0.1 + rng.uniform());
      tot += w.back();
    }
    for (auto& v : w) v /= tot;
    double rest = 1.0;
    for (std::size_t j = 0; j + 1 < k; ++j) rest -= w[j];
    w.back() = rest;
    const Observation y = Observation::value(rng.normal());
    const LossSpec loss = LossSpec::kernel_tandem(KernelSpec(0.5 + rng.uniform()));
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) s += w[i] * w[j] * tandem_loss_mmd(kStd, a[i], a[j], y, loss, rng).value;
    EXPECT_NEAR(s, exact_predictive_score_discrete(kStd, a, w, y, MmdScoreRule{loss.kernel_spec()}), 1e-10);
  }
}

TEST(ScoringExact, JensenDirection) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<Theta> a{Theta{rng.normal()}, Theta{rng.normal()}, Theta{rng.normal()}};
    std::vector<double> w{0.2, 0.3, 0.5};
    const Observation y = Observation::value(rng.normal());
    double avg = 0.0;
    for (int j = 0; j < 3; ++j) avg -= w[j] * log_density(kStd, a[j], y);
    EXPECT_LE(exact_predictive_score_discrete(kStd, a, w, y, LogScoreRule{}), avg + 1e-14);
  }
  const std::vector<Theta> point{Theta{0.4}, Theta{0.4}};
  const std::vector<double> half{0.5, 0.5};
  EXPECT_NEAR(exact_predictive_score_discrete(kStd, point, half, Observation::value(0.0), LogScoreRule{}),
              -log_density(kStd, Theta{0.4}, Observation::value(0.0)), 1e-14);
}

TEST(ScoringExact, DIUpperBoundsLogScore) {
  // The Jensen gap of -log is at least Var(p) / (2 u^2) while the expected DI
  // penalty is Var(p) / u, so the bound is guaranteed once u <= 1/2.
  Rng rng(12);
  for (double sigma : {0.8, 1.0, 2.0}) {
    const ModelSpec m = ModelSpec::gaussian_location(sigma);
    ASSERT_LE(m.density_sup(), 0.5);
    for (int t = 0; t < 20; ++t) {
      const std::size_t k = 1 + rng.index(5);
      std::vector<Theta> a;
      std::vector<double> w(k, 1.0 / static_cast<double>(k));
      for (std::size_t j = 0; j < k; ++j) a.emplace_back(Theta{2.0 * rng.normal()});
      const Observation y = Observation::value(rng.normal());
      double di = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) di += w[i] * w[j] * loss_di_log(m, a[i], a[j], y, m.density_sup()).value;
      EXPECT_GE(di - exact_predictive_score_discrete(m, a, w, y, LogScoreRule{}), -1e-12);
    }
  }
}

TEST(ScoringExact, DIBoundCanFailWhenSupExceedsHalf) {
  // Bernoulli masses have u = 1: equal atoms with p = 0.5 and p = 0.99 at y = 1
  const ModelSpec m = ModelSpec::logistic_regression(1);
  const std::vector<Theta> a{Theta{0.0}, Theta{std::log(99.0)}};
  const std::vector<double> w{0.5, 0.5};
  const Observation y = Observation::label(Vector::Constant(1, 1.0), 1);
  double di = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) di += 0.25 * loss_di_log(m, a[i], a[j], y, 1.0).value;
  const double by_hand = 0.5 * (-std::log(0.5) - std::log(0.99)) - 0.49 * 0.49 / 4.0;
  EXPECT_NEAR(di, by_hand, 1e-12);
  const double exact = exact_predictive_score_discrete(m, a, w, y, LogScoreRule{});
  EXPECT_NEAR(exact, -std::log(0.745), 1e-12);
  EXPECT_LT(di, exact - 1e-3);
}

TEST(ScoringExact, MsSandwich) {
  Rng rng(13);
  const std::vector<Theta> atoms{Theta{-1.5}, Theta{0.2}, Theta{1.8}};
  const std::vector<double> w{0.3, 0.5, 0.2};
  const Observation y = Observation::value(0.7);
  const double exact = exact_predictive_score_discrete(kStd, atoms, w, y, LogScoreRule{});
  double prev = 1e300, prev_se = 0.0;
  for (std::size_t k : {1, 2, 4, 8}) {
    std::vector<double> reps;
    std::vector<Theta> draw(k);
    for (int r = 0; r < 100000; ++r) {
      for (auto& d : draw) {
        const double u = rng.uniform();
        d = u < 0.3 ? atoms[0] : (u < 0.8 ? atoms[1] : atoms[2]);
      }
      reps.push_back(loss_ms_log(kStd, draw, y).value);
    }
    const auto ms = oracle::mean_se(reps);
    EXPECT_LE(exact, ms.mean + 3.0 * ms.se) << "k=" << k;
    EXPECT_LE(ms.mean, prev + 3.0 * std::hypot(ms.se, prev_se)) << "k=" << k;
    prev = ms.mean;
    prev_se = ms.se;
  }
}

TEST(ScoringExact, WeightsMustSumToOne) {
  const std::vector<Theta> a{Theta{0.0}, Theta{1.0}};
  const std::vector<double> w{0.5, 0.6};
  EXPECT_THROW(exact_predictive_score_discrete(kStd, a, w, Observation::value(0.0), LogScoreRule{}), ConfigError);
  const std::vector<double> neg{1.5, -0.5};
  EXPECT_THROW(exact_predictive_score_discrete(kStd, a, neg, Observation::value(0.0), LogScoreRule{}), ConfigError);
}
