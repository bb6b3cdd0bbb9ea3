#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace proflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, dimension mismatch or unsupported combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or diverging numerical state.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// FNV-1a; used to turn names into stable substream labels.
constexpr std::uint64_t label_of(std::string_view name) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/**
 * SplitMix64 generator with cheap construction, so every (seed, label...)
 * tuple can own an independent stream. Results never depend on which thread
 * consumes a stream.
 */
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(mix64(seed)) {}

  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
    std::uint64_t s = mix64(seed);
    for (auto l : labels) s = mix64(s ^ mix64(l + 0x632be59bd9b4e019ULL));
    return Rng(s);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double normal() { return normal_(*this); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(*this);
  }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double log_sum_exp(const double* values, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, values[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(values[i] - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& values) {
  return log_sum_exp(values.data(), values.size());
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Runs fn(i) for i in [0, count) split into contiguous chunks over `threads`
/// workers. Callers must not depend on execution order.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  threads = std::min(threads, count);
  const std::size_t chunk = (count + threads - 1) / threads;
  std::vector<std::exception_ptr> failures(threads);
  auto run = [&](std::size_t t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    try {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      failures[t] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) workers.emplace_back(run, t);
    run(0);
  }
  // lowest chunk wins so the reported error matches the serial run
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace proflow
