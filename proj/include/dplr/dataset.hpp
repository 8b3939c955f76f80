#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dplr/random.hpp"

namespace dplr {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Eigen::MatrixXd X;  // N x d_x raw inputs
  Eigen::MatrixXd Y;  // N x d_y raw outputs
  std::string name;

  Eigen::Index rows() const { return X.rows(); }
  int input_dim() const { return static_cast<int>(X.cols()); }
  int output_dim() const { return static_cast<int>(Y.cols()); }

  void validate() const {
    if (X.rows() != Y.rows())
      throw std::invalid_argument("Dataset: row count mismatch");
    if (!X.allFinite() || !Y.allFinite())
      throw std::invalid_argument("Dataset: non-finite entries");
  }
};

// ---------------------------------------------------------------------------
// Noiseless signal shapes behind the synthetic generators
// ---------------------------------------------------------------------------

inline double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }

inline double sinc_noise_std(double x) {
  return 0.05 + 0.2 * (1.0 + std::sin(2.0 * x)) / (1.0 + std::exp(-0.2 * x));
}

/// Three flat levels on [-3, 3].
inline double step_function(double x) {
  if (x < -1.0) return -1.0;
  if (x < 1.0) return 0.0;
  return 1.0;
}

/// Two cubic segments with a jump at zero.
inline double cubic_segments(double x) {
  if (x < 0.0) {
    const double t = x + 0.5;
    return 8.0 * t * t * t - 2.0 * t;
  }
  const double t = x - 0.5;
  return 8.0 * t * t * t - 2.0 * t + 1.0;
}

inline double chirp_signal(double t) {
  return std::sin(2.0 * M_PI * (0.25 + 0.75 * t) * t);
}

/// Period-2 unit triangle wave, peaks of 1 at odd abscissae.
inline double triangle_wave(double x) {
  const double u = x - 2.0 * std::floor(x / 2.0);
  return u < 1.0 ? u : 2.0 - u;
}

/// Forward map of the inverse-mapping task; the dataset flips it to x -> y.
inline double inverse_mapping_forward(double y) {
  return y + 0.3 * std::sin(2.0 * M_PI * y);
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset make_1d(int n, const std::string& name) {
  if (n < 1) throw std::invalid_argument("generator: n >= 1");
  Dataset ds;
  ds.X.resize(n, 1);
  ds.Y.resize(n, 1);
  ds.name = name;
  return ds;
}

}  // namespace detail

/// Stochastic sinc on [-10, 10] with the input-dependent noise envelope.
inline Dataset gen_sinc_hetero(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "sinc-hetero");
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-10.0, 10.0);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = sinc(x) + sinc_noise_std(x) * rng.normal();
  }
  return ds;
}

/// Noisy sine supported on [0,2] u [4,6] u [8,10].
inline Dataset gen_gap_sine(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "gap-sine");
  for (int i = 0; i < n; ++i) {
    const double x =
        4.0 * static_cast<double>(rng.integer(3)) + rng.uniform(0.0, 2.0);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = std::sin(x) + 0.1 * rng.normal();
  }
  return ds;
}

inline Dataset gen_steps(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "steps");
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-3.0, 3.0);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = step_function(x) + 0.05 * rng.normal();
  }
  return ds;
}

inline Dataset gen_cubics(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "cubics");
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = cubic_segments(x) + 0.1 * rng.normal();
  }
  return ds;
}

/// Chirp on t in [0, 3], rows sorted by t so contiguous splits give the
/// arrival batches of the sequential-learning experiment.
inline Dataset gen_chirp(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "chirp");
  std::vector<double> ts(n);
  for (auto& t : ts) t = rng.uniform(0.0, 3.0);
  std::sort(ts.begin(), ts.end());
  for (int i = 0; i < n; ++i) {
    ds.X(i, 0) = ts[i];
    ds.Y(i, 0) = chirp_signal(ts[i]) + 0.1 * rng.normal();
  }
  return ds;
}

inline Dataset gen_triangle(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "triangle");
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 6.0);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = triangle_wave(x) + 0.05 * rng.normal();
  }
  return ds;
}

/// Scattered multi-valued mapping: y ~ U[0,1], x = y + 0.3 sin(2 pi y) + noise.
inline Dataset gen_inverse_mapping(int n, RngStream& rng) {
  Dataset ds = detail::make_1d(n, "inverse-mapping");
  for (int i = 0; i < n; ++i) {
    const double y = rng.uniform(0.0, 1.0);
    ds.X(i, 0) = inverse_mapping_forward(y) + 0.05 * rng.normal();
    ds.Y(i, 0) = y;
  }
  return ds;
}

inline std::vector<std::string> generator_names() {
  return {"gap-sine", "sinc-hetero", "steps",  "cubics",
          "triangle", "inverse-mapping", "chirp"};
}

inline Dataset generate_by_name(const std::string& name, int n,
                                RngStream& rng) {
  if (name == "sinc-hetero") return gen_sinc_hetero(n, rng);
  if (name == "gap-sine") return gen_gap_sine(n, rng);
  if (name == "steps") return gen_steps(n, rng);
  if (name == "cubics") return gen_cubics(n, rng);
  if (name == "chirp") return gen_chirp(n, rng);
  if (name == "triangle") return gen_triangle(n, rng);
  if (name == "inverse-mapping") return gen_inverse_mapping(n, rng);
  throw std::invalid_argument("unknown generator: " + name);
}

// ---------------------------------------------------------------------------
// CSV interchange: header "x1,..,xD,y1,..,yD", full decimal precision
// ---------------------------------------------------------------------------

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (int j = 0; j < ds.input_dim(); ++j)
    out << (j ? "," : "") << "x" << (j + 1);
  for (int j = 0; j < ds.output_dim(); ++j) out << ",y" << (j + 1);
  out << "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    for (int j = 0; j < ds.input_dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.X(i, j));
      out << (j ? "," : "") << buf;
    }
    for (int j = 0; j < ds.output_dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.Y(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, int d_x, int d_y) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const auto header = detail::split_line(line);
  if (static_cast<int>(header.size()) != d_x + d_y)
    throw std::invalid_argument(path + ": expected " +
                                std::to_string(d_x + d_y) + " columns, found " +
                                std::to_string(header.size()));

  std::vector<double> values;
  int n = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line);
    if (static_cast<int>(fields.size()) != d_x + d_y)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": wrong field count");
    for (const auto& f : fields) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &pos);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": bad number '" + f + "'");
      }
      if (pos != f.size())
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": bad number '" + f + "'");
      values.push_back(v);
    }
    ++n;
  }

  Dataset ds;
  ds.name = path;
  ds.X.resize(n, d_x);
  ds.Y.resize(n, d_y);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d_x; ++j) ds.X(i, j) = values[i * (d_x + d_y) + j];
    for (int j = 0; j < d_y; ++j)
      ds.Y(i, j) = values[i * (d_x + d_y) + d_x + j];
  }
  return ds;
}

/// Infer (d_x, d_y) from the header's x*/y* column names.
inline Dataset load_csv_auto(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  int d_x = 0, d_y = 0;
  for (const auto& name : detail::split_line(line)) {
    if (!name.empty() && (name[0] == 'x' || name[0] == 'X'))
      ++d_x;
    else if (!name.empty() && (name[0] == 'y' || name[0] == 'Y'))
      ++d_y;
    else
      throw ParseError(path + ":1: unrecognized column '" + name + "'");
  }
  if (d_x == 0 || d_y == 0)
    throw ParseError(path + ":1: header must name x and y columns");
  return load_csv(path, d_x, d_y);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset take_rows(const Dataset& ds, const std::vector<int>& idx,
                         const std::string& suffix) {
  Dataset out;
  out.name = ds.name.empty() ? suffix : ds.name + "/" + suffix;
  out.X.resize(idx.size(), ds.input_dim());
  out.Y.resize(idx.size(), ds.output_dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.X.row(i) = ds.X.row(idx[i]);
    out.Y.row(i) = ds.Y.row(idx[i]);
  }
  return out;
}

}  // namespace detail

/// Random partition into parts of the given fractions (must sum to ~1).
inline std::vector<Dataset> split_fractions(const Dataset& ds,
                                            const std::vector<double>& fracs,
                                            RngStream& rng) {
  if (fracs.empty()) throw std::invalid_argument("split: no fractions");
  const double total = std::accumulate(fracs.begin(), fracs.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");

  const int n = static_cast<int>(ds.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.integer(i + 1)]);

  std::vector<Dataset> parts;
  int used = 0;
  for (std::size_t p = 0; p < fracs.size(); ++p) {
    int count = (p + 1 == fracs.size())
                    ? n - used
                    : static_cast<int>(std::lround(fracs[p] * n));
    count = std::min(count, n - used);
    std::vector<int> idx(order.begin() + used, order.begin() + used + count);
    std::sort(idx.begin(), idx.end());
    parts.push_back(detail::take_rows(ds, idx, "part" + std::to_string(p)));
    used += count;
  }
  return parts;
}

/// Contiguous partition into `count` near-equal batches, preserving order.
inline std::vector<Dataset> split_batches(const Dataset& ds, int count) {
  if (count < 1) throw std::invalid_argument("split: count >= 1");
  const int n = static_cast<int>(ds.rows());
  std::vector<Dataset> parts;
  int used = 0;
  for (int p = 0; p < count; ++p) {
    const int size = (n - used) / (count - p);
    std::vector<int> idx(size);
    std::iota(idx.begin(), idx.end(), used);
    parts.push_back(detail::take_rows(ds, idx, "batch" + std::to_string(p)));
    used += size;
  }
  return parts;
}

}  // namespace dplr
