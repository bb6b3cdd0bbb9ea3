#pragma once

// Reference computations for the test suite. Nothing here calls into the
// library, so a test comparing against these does not check the code
// against itself.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline double normal_pdf(double y, double mu, double s) {
  const double z = (y - mu) / s;
  return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Composite Simpson rule on [lo, hi].
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int panels = 2000) {
  if (panels % 2) ++panels;
  const double h = (hi - lo) / panels;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return acc * h / 3.0;
}

// E f(Y) for Y ~ N(mu, s^2), integrated over mu +- 12 s.
inline double gauss_expect(double mu, double s, const std::function<double(double)>& f, int panels = 2000) {
  return simpson([&](double y) { return normal_pdf(y, mu, s) * f(y); }, mu - 12.0 * s, mu + 12.0 * s, panels);
}

inline double rbf(double a, double b, double gamma) { return std::exp(-(a - b) * (a - b) / (2.0 * gamma * gamma)); }

// Central differences with a fixed absolute step.
inline Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                    double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    Eigen::VectorXd up = x, dn = x;
    up[d] += h;
    dn[d] -= h;
    g[d] = (f(up) - f(dn)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(want.cwiseAbs().maxCoeff(), 1e-6);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  long double s = 0.0L, s2 = 0.0L;
  for (double x : xs) {
    s += x;
    s2 += static_cast<long double>(x) * x;
  }
  const long double n = static_cast<long double>(xs.size());
  const long double m = s / n;
  const long double var = (s2 - n * m * m) / (n - 1.0L);
  return {static_cast<double>(m), static_cast<double>(std::sqrt(std::max(var, 0.0L) / n))};
}

}  // namespace oracle
