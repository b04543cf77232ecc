#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bezgp/errors.hpp"
#include "bezgp/rng.hpp"

namespace bezgp {

// A regression dataset: features in original units, one scalar target.
// n == 0 is representable (e.g. a header-only prediction input); training
// entry points reject it explicitly.
struct Dataset {
  Eigen::MatrixXd X;                       // n x d
  Eigen::VectorXd y;                       // n (may be empty when no target column)
  std::vector<std::string> feature_names;  // length d
  std::string target_name;                 // empty when no target column

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }
};

enum class OodPolicy { discard, clamp, evaluate };

// Per-dimension affine map onto [0,1]^d, fitted on training inputs only.
struct BoxScaler {
  Eigen::VectorXd lo, hi;  // hi > lo per dimension
  std::vector<std::string> warnings;
};

// Result of applying a scaler: scaled rows, which input rows were kept, and
// how many were dropped (discard policy only).
struct ScaledInputs {
  Eigen::MatrixXd X;               // kept rows, mapped
  std::vector<Eigen::Index> kept;  // original row indices of X's rows
  Eigen::Index discarded = 0;
  bool out_of_box_evaluated = false;  // evaluate policy passed rows outside [0,1]
};

// Target standardization statistics (population standard deviation).
struct TargetStats {
  double mean = 0.0;
  double stddev = 1.0;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& path, long row, long col, const std::string& raw) {
  const std::string cell = trim(raw);
  if (cell.empty()) throw ParseError(path, row, col, "empty cell");
  char* end = nullptr;
  const double val = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size())
    throw ParseError(path, row, col, "non-numeric cell '" + cell + "'");
  if (!std::isfinite(val))
    throw ParseError(path, row, col, "non-finite cell '" + cell + "'");
  return val;
}

// Shortest-exact formatting: enough digits that reading the value back gives
// the identical double.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[64];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      if (std::strtod(shorter, nullptr) == v) return shorter;
    }
  }
  return buf;
}

}  // namespace detail

// Load a delimited text file with a header row. Comma is the default
// delimiter; a tab-delimited header switches the whole file to tabs. When
// `target_column` is nonempty that column becomes y; otherwise every column
// is a feature and y stays empty.
inline Dataset load_csv(const std::string& path, const std::string& target_column = "") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path, 0, 1, "missing header row");
  const char delim =
      (header.find('\t') != std::string::npos && header.find(',') == std::string::npos) ? '\t'
                                                                                        : ',';
  std::vector<std::string> names = detail::split_fields(header, delim);
  for (auto& nm : names) nm = detail::trim(nm);
  if (names.empty()) throw ParseError(path, 0, 1, "empty header row");

  long target_idx = -1;
  if (!target_column.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == target_column) target_idx = static_cast<long>(i);
    if (target_idx < 0)
      throw MissingColumn("column '" + target_column + "' not found in '" + path + "'");
  }

  std::vector<std::vector<double>> rows;
  std::string line;
  long rowno = 0;
  while (std::getline(in, line)) {
    ++rowno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line, delim);
    if (fields.size() != names.size())
      throw ParseError(path, rowno, static_cast<long>(fields.size()),
                       "expected " + std::to_string(names.size()) + " fields, got " +
                           std::to_string(fields.size()));
    std::vector<double> vals(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      vals[c] = detail::parse_cell(path, rowno, static_cast<long>(c) + 1, fields[c]);
    rows.push_back(std::move(vals));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index ncols = static_cast<Eigen::Index>(names.size());
  const Eigen::Index d = target_idx >= 0 ? ncols - 1 : ncols;
  if (d < 1) throw ParseError(path, 0, 1, "no feature columns remain");

  Dataset ds;
  ds.X.resize(n, d);
  ds.y.resize(target_idx >= 0 ? n : 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index fc = 0;
    for (Eigen::Index c = 0; c < ncols; ++c) {
      if (c == target_idx)
        ds.y(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      else
        ds.X(i, fc++) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
  }
  for (Eigen::Index c = 0; c < ncols; ++c) {
    if (c == target_idx)
      ds.target_name = names[static_cast<std::size_t>(c)];
    else
      ds.feature_names.push_back(names[static_cast<std::size_t>(c)]);
  }
  return ds;
}

inline void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const bool has_y = ds.y.size() == ds.n() && ds.n() >= 0 && !ds.target_name.empty();
  for (Eigen::Index c = 0; c < ds.d(); ++c) {
    if (c) out << ',';
    out << (c < static_cast<Eigen::Index>(ds.feature_names.size())
                ? ds.feature_names[static_cast<std::size_t>(c)]
                : "x" + std::to_string(c + 1));
  }
  if (has_y) out << ',' << ds.target_name;
  out << '\n';
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index c = 0; c < ds.d(); ++c) {
      if (c) out << ',';
      out << detail::format_double(ds.X(i, c));
    }
    if (has_y) out << ',' << detail::format_double(ds.y(i));
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Fit the domain box on training inputs, optionally widened by a fraction of
// each dimension's width. A constant column gets width 1 centered on its
// value (with a warning) so the map stays well-defined; that dimension is
// simply uninformative.
inline BoxScaler fit_box_scaler(const Eigen::MatrixXd& train_X, double margin = 0.0) {
  if (train_X.rows() < 1) throw EmptyData("cannot fit a domain box on an empty training set");
  if (margin < 0.0) throw InvalidArgument("margin must be nonnegative");
  BoxScaler sc;
  sc.lo = train_X.colwise().minCoeff().transpose();
  sc.hi = train_X.colwise().maxCoeff().transpose();
  for (Eigen::Index g = 0; g < train_X.cols(); ++g) {
    double width = sc.hi(g) - sc.lo(g);
    if (width <= 0.0) {
      sc.warnings.push_back("feature column " + std::to_string(g + 1) +
                            " is constant on the training set; using unit width around it");
      sc.lo(g) -= 0.5;
      sc.hi(g) += 0.5;
      width = 1.0;
    }
    sc.lo(g) -= margin * width;
    sc.hi(g) += margin * width;
  }
  return sc;
}

inline ScaledInputs apply_scaler(const BoxScaler& sc, const Eigen::MatrixXd& X,
                                 OodPolicy policy) {
  if (X.cols() != sc.lo.size())
    throw ShapeMismatch("input column count does not match the fitted domain box");
  ScaledInputs out;
  std::vector<Eigen::VectorXd> kept_rows;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::VectorXd row(X.cols());
    bool inside = true;
    for (Eigen::Index g = 0; g < X.cols(); ++g) {
      double t = (X(i, g) - sc.lo(g)) / (sc.hi(g) - sc.lo(g));
      if (t < 0.0 || t > 1.0) {
        inside = false;
        if (policy == OodPolicy::clamp) t = std::clamp(t, 0.0, 1.0);
      }
      row(g) = t;
    }
    if (!inside && policy == OodPolicy::discard) {
      ++out.discarded;
      continue;
    }
    if (!inside && policy == OodPolicy::evaluate) out.out_of_box_evaluated = true;
    kept_rows.push_back(std::move(row));
    out.kept.push_back(i);
  }
  out.X.resize(static_cast<Eigen::Index>(kept_rows.size()), X.cols());
  for (std::size_t i = 0; i < kept_rows.size(); ++i)
    out.X.row(static_cast<Eigen::Index>(i)) = kept_rows[i].transpose();
  return out;
}

// Seeded shuffle split: first ceil(ratio*n) shuffled rows train, rest test.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double ratio, std::uint64_t seed) {
  if (data.n() < 2) throw EmptyData("split needs at least two rows");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must be in (0,1)");
  Rng rng(seed);
  const std::vector<int> order = rng.permutation(static_cast<int>(data.n()));
  const Eigen::Index ntrain = static_cast<Eigen::Index>(
      std::ceil(ratio * static_cast<double>(data.n())));
  auto take = [&](Eigen::Index from, Eigen::Index count) {
    Dataset out;
    out.X.resize(count, data.d());
    out.y.resize(data.y.size() > 0 ? count : 0);
    for (Eigen::Index i = 0; i < count; ++i) {
      const int src = order[static_cast<std::size_t>(from + i)];
      out.X.row(i) = data.X.row(src);
      if (data.y.size() > 0) out.y(i) = data.y(src);
    }
    out.feature_names = data.feature_names;
    out.target_name = data.target_name;
    return out;
  };
  return {take(0, ntrain), take(ntrain, data.n() - ntrain)};
}

// The 1-D synthetic benchmark: 20 inputs uniform on [0, 0.33], 20 uniform on
// [0.66, 1], responses y = 3 sin(16 x) with no added noise. The gap between
// the regions is where a trained model should revert to its prior.
inline Dataset gen_synthetic_1d(std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.X.resize(40, 1);
  ds.y.resize(40);
  for (int i = 0; i < 20; ++i) ds.X(i, 0) = rng.uniform(0.0, 0.33);
  for (int i = 20; i < 40; ++i) ds.X(i, 0) = rng.uniform(0.66, 1.0);
  for (int i = 0; i < 40; ++i) ds.y(i) = 3.0 * std::sin(16.0 * ds.X(i, 0));
  ds.feature_names = {"x"};
  ds.target_name = "y";
  return ds;
}

inline TargetStats fit_target_stats(const Eigen::VectorXd& y) {
  if (y.size() < 1) throw EmptyData("cannot standardize an empty target vector");
  TargetStats st;
  st.mean = y.mean();
  st.stddev = std::sqrt((y.array() - st.mean).square().mean());
  if (st.stddev < 1e-12) st.stddev = 1.0;  // constant target: identity scale
  return st;
}

inline Eigen::VectorXd standardize(const Eigen::VectorXd& y, const TargetStats& st) {
  return (y.array() - st.mean) / st.stddev;
}

// One prediction in original target units.
struct Prediction {
  double mean = 0.0;
  double f_var = 0.0;  // epistemic part
  double y_var = 0.0;  // f_var + noise
};

struct Metrics {
  double rmse = 0.0;
  double mean_loglik = 0.0;
};

// RMSE of the means and average Gaussian log density of the observations
// under (mean, y_var), everything in original units.
inline Metrics metrics(const std::vector<Prediction>& preds, const Eigen::VectorXd& truths) {
  if (static_cast<Eigen::Index>(preds.size()) != truths.size())
    throw LengthMismatch("prediction and truth counts differ");
  if (preds.empty()) throw EmptyData("metrics need at least one point");
  double sse = 0.0, ll = 0.0;
  for (Eigen::Index i = 0; i < truths.size(); ++i) {
    const Prediction& p = preds[static_cast<std::size_t>(i)];
    const double err = truths(i) - p.mean;
    sse += err * err;
    ll += -0.5 * std::log(2.0 * M_PI * p.y_var) - 0.5 * err * err / p.y_var;
  }
  Metrics m;
  m.rmse = std::sqrt(sse / static_cast<double>(truths.size()));
  m.mean_loglik = ll / static_cast<double>(truths.size());
  return m;
}

}  // namespace bezgp
