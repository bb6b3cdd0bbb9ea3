#pragma once

#include "proflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace proflow {

/**
 * Rows of observations with a shared schema. Synthetic generators also
 * record the latent mixture component of each row in `component`.
 */
struct TabularDataset {
  std::vector<std::string> columns;
  std::vector<Observation> rows;
  std::vector<int> component;
  // per-column affine transform applied at load time: (raw - shift) / scale
  Vector shift;
  Vector scale;

  std::size_t size() const { return rows.size(); }
};

namespace detail {

inline std::uint64_t dataset_stream(std::string_view experiment, std::string_view variant = {}) {
  return mix64(label_of(experiment) ^ mix64(label_of(variant)));
}

}  // namespace detail

inline const std::vector<std::string>& normal_location_dgps() {
  static const std::vector<std::string> names{"well_specified", "mixture", "claw", "heavy_tails"};
  return names;
}

/// n draws from one of the normal-location data-generating processes.
inline TabularDataset gen_normal_location(const std::string& dgp, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_normal_location: n must be >= 1");
  const auto& names = normal_location_dgps();
  if (std::find(names.begin(), names.end(), dgp) == names.end())
    throw ConfigError("unknown normal_location dgp '" + dgp + "' (expected well_specified, mixture, claw or heavy_tails)");
  Rng rng = Rng::substream(seed, {detail::dataset_stream("normal_location", dgp)});
  TabularDataset d;
  d.columns = {"y"};
  d.rows.reserve(n);
  d.component.reserve(n);
  std::student_t_distribution<double> student(1.5);
  for (std::size_t i = 0; i < n; ++i) {
    double y;
    int c = 0;
    if (dgp == "well_specified") {
      y = rng.normal();
    } else if (dgp == "mixture") {
      c = rng.uniform() < 0.2 ? 0 : 1;
      y = (c == 0 ? -2.0 : 2.0) + rng.normal();
    } else if (dgp == "claw") {
      c = static_cast<int>(rng.index(3));
      y = -2.0 + 2.0 * c + rng.normal();
    } else {
      y = student(rng);
    }
    d.rows.push_back(Observation::value(y));
    d.component.push_back(c);
  }
  return d;
}

/**
 * Covariates uniform on [-2, 2]^2. Labels are 0 when x0 < 0 < x1, 1 when
 * x1 < 0 < x0, and Bernoulli(0.5) in the two remaining quadrants.
 */
inline TabularDataset gen_quadrant_classification(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_quadrant_classification: n must be >= 1");
  Rng rng = Rng::substream(seed, {detail::dataset_stream("quadrant_classification")});
  TabularDataset d;
  d.columns = {"x_0", "x_1", "y"};
  d.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(2);
    x[0] = -2.0 + 4.0 * rng.uniform();
    x[1] = -2.0 + 4.0 * rng.uniform();
    const double coin = rng.uniform();
    int y;
    if (x[0] < 0.0 && x[1] > 0.0)
      y = 0;
    else if (x[0] > 0.0 && x[1] < 0.0)
      y = 1;
    else
      y = coin < 0.5 ? 1 : 0;
    d.rows.push_back(Observation::label(std::move(x), y));
    d.component.push_back(y);
  }
  return d;
}

/// x ~ N(0, I_2); y = x^T (0, 2) + e or x^T (0, -2) + e with equal
/// probability, e ~ N(0, 1). `component` is 0 for the +2 branch.
inline TabularDataset gen_mixture_regression(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_mixture_regression: n must be >= 1");
  Rng rng = Rng::substream(seed, {detail::dataset_stream("mixture_regression")});
  TabularDataset d;
  d.columns = {"x_0", "x_1", "y"};
  d.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(2);
    x[0] = rng.normal();
    x[1] = rng.normal();
    const int c = rng.uniform() < 0.5 ? 0 : 1;
    const double y = (c == 0 ? 2.0 : -2.0) * x[1] + rng.normal();
    d.rows.push_back(Observation::regression(std::move(x), y));
    d.component.push_back(c);
  }
  return d;
}

enum class CsvSchema { Golf, Penguins, Generic };

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_number(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(cell, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == cell.size() && std::isfinite(out);
}

}  // namespace detail

/**
 * Reads a CSV dataset.
 *  - Golf: `distance_ft,tries,successes` as grouped binomial counts.
 *  - Penguins: `bill_length_mm,bill_depth_mm`, each column centred and scaled
 *    to unit (population) variance; the transform is kept on the dataset.
 *  - Generic: `y` or `y_0,y_1` for unconditional data; `x_0..x_{d-1},y` for
 *    regression or 0/1 labels; `x_0,tries,successes` for grouped counts.
 * Bad cells are collected and reported together with their line numbers.
 */
inline TabularDataset load_csv_dataset(const std::string& path, CsvSchema schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line).empty())
    throw ConfigError("dataset '" + path + "' is empty");
  const auto header = detail::split_csv_line(line);

  enum class Kind { Grouped, Unconditional, Conditional } kind;
  std::size_t xdim = 0;
  if (schema == CsvSchema::Golf) {
    if (header != std::vector<std::string>{"distance_ft", "tries", "successes"})
      throw ConfigError("'" + path + "': golf schema expects header distance_ft,tries,successes");
    kind = Kind::Grouped;
  } else if (schema == CsvSchema::Penguins) {
    if (header != std::vector<std::string>{"bill_length_mm", "bill_depth_mm"})
      throw ConfigError("'" + path + "': penguins schema expects header bill_length_mm,bill_depth_mm");
    kind = Kind::Unconditional;
  } else if (header == std::vector<std::string>{"y"} || header == std::vector<std::string>{"y_0", "y_1"}) {
    kind = Kind::Unconditional;
  } else if (header == std::vector<std::string>{"x_0", "tries", "successes"}) {
    kind = Kind::Grouped;
  } else {
    while (xdim < header.size() && header[xdim] == "x_" + std::to_string(xdim)) ++xdim;
    if (xdim == 0 || xdim + 1 != header.size() || header.back() != "y")
      throw ConfigError("'" + path + "': unrecognised generic header '" + line +
                        "' (expected y | y_0,y_1 | x_0..x_{d-1},y | x_0,tries,successes)");
    kind = Kind::Conditional;
  }

  TabularDataset d;
  d.columns = header;
  std::vector<Vector> raw;
  std::string errors;
  std::size_t bad = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      if (bad++ < 20)
        errors += "\n  line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                  " cells, got " + std::to_string(cells.size());
      continue;
    }
    Vector v(static_cast<Eigen::Index>(cells.size()));
    bool ok = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_number(cells[c], v[static_cast<Eigen::Index>(c)])) {
        ok = false;
        if (bad++ < 20)
          errors += "\n  line " + std::to_string(lineno) + ": column '" + header[c] + "' has " +
                    (cells[c].empty() ? std::string("a missing value") : "non-numeric value '" + cells[c] + "'");
      }
    }
    if (ok) raw.push_back(std::move(v));
  }
  if (bad > 0)
    throw ConfigError("dataset '" + path + "' has " + std::to_string(bad) + " bad cell(s):" + errors);
  if (raw.empty()) throw ConfigError("dataset '" + path + "' has no data rows");

  const auto cols = static_cast<Eigen::Index>(header.size());
  if (schema == CsvSchema::Penguins) {
    Matrix m(static_cast<Eigen::Index>(raw.size()), cols);
    for (std::size_t i = 0; i < raw.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = raw[i].transpose();
    d.shift = m.colwise().mean().transpose();
    const Matrix centered = m.rowwise() - d.shift.transpose();
    d.scale = (centered.array().square().colwise().sum() / static_cast<double>(m.rows())).sqrt().transpose();
    if (!(d.scale.array() > 0.0).all()) throw ConfigError("penguins column has zero variance");
    for (auto& v : raw) v = (v - d.shift).cwiseQuotient(d.scale);
  }

  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Vector& v = raw[i];
    switch (kind) {
      case Kind::Grouped: {
        const double t = v[1], s = v[2];
        if (t != std::floor(t) || s != std::floor(s) || t < 0 || s < 0 || s > t)
          throw ConfigError("dataset '" + path + "': row " + std::to_string(i + 2) +
                            " needs integer counts with 0 <= successes <= tries");
        d.rows.push_back(Observation::grouped(v[0], static_cast<std::int64_t>(t), static_cast<std::int64_t>(s)));
        break;
      }
      case Kind::Unconditional:
        d.rows.push_back(cols == 1 ? Observation::value(v[0]) : Observation::point(v));
        break;
      case Kind::Conditional:
        d.rows.push_back({Vector::Constant(1, v[cols - 1]), std::nullopt, v.head(cols - 1)});
        break;
    }
  }
  return d;
}

/// Header used by write_dataset_csv for rows shaped like `sample`.
inline std::vector<std::string> generic_header(const Observation& sample) {
  std::vector<std::string> h;
  if (sample.counts) return {"x_0", "tries", "successes"};
  for (Eigen::Index i = 0; i < sample.covariate.size(); ++i) h.push_back("x_" + std::to_string(i));
  if (sample.covariate.size() == 0 && sample.response.size() > 1) {
    for (Eigen::Index i = 0; i < sample.response.size(); ++i) h.push_back("y_" + std::to_string(i));
  } else {
    h.push_back("y");
  }
  return h;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes rows in the generic schema (readable with CsvSchema::Generic).
inline void write_dataset_csv(const std::string& path, std::span<const Observation> rows) {
  if (rows.empty()) throw ConfigError("write_dataset_csv: no rows");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const auto header = generic_header(rows.front());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& o : rows) {
    if (o.counts) {
      out << format_double(o.covariate[0]) << ',' << o.counts->tries << ',' << o.counts->successes << '\n';
      continue;
    }
    bool first = true;
    auto put = [&](double v) {
      out << (first ? "" : ",") << format_double(v);
      first = false;
    };
    for (Eigen::Index i = 0; i < o.covariate.size(); ++i) put(o.covariate[i]);
    for (Eigen::Index i = 0; i < o.response.size(); ++i) put(o.response[i]);
    out << '\n';
  }
}

}  // namespace proflow
