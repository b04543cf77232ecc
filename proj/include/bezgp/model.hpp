#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "bezgp/bernstein.hpp"
#include "bezgp/buttress.hpp"
#include "bezgp/data.hpp"
#include "bezgp/errors.hpp"
#include "bezgp/rng.hpp"

namespace bezgp {

inline constexpr double kNoiseFloor = 1e-8;
inline constexpr int kModelFormatVersion = 1;

// Axis-aligned domain box in original feature units.
struct DomainBox {
  Eigen::VectorXd lo, hi;

  void validate() const {
    if (lo.size() != hi.size() || lo.size() < 1)
      throw InvalidDomain("domain box needs matching lo/hi of length >= 1");
    for (Eigen::Index g = 0; g < lo.size(); ++g)
      if (!(lo(g) < hi(g)))
        throw InvalidDomain("domain dimension " + std::to_string(g + 1) +
                            " has lo >= hi");
  }

  // Map one point into [0,1]^d; strict about staying inside.
  Eigen::VectorXd to_unit(const Eigen::VectorXd& x) const {
    if (x.size() != lo.size()) throw ShapeMismatch("point dimension does not match domain");
    Eigen::VectorXd t(x.size());
    for (Eigen::Index g = 0; g < x.size(); ++g) {
      t(g) = (x(g) - lo(g)) / (hi(g) - lo(g));
      if (t(g) < 0.0 || t(g) > 1.0)
        throw OutOfDomain("coordinate " + std::to_string(g + 1) + " maps to " +
                          std::to_string(t(g)) + ", outside [0,1]");
    }
    return t;
  }
};

inline DomainBox domain_from_scaler(const BoxScaler& sc) {
  DomainBox d{sc.lo, sc.hi};
  d.validate();
  return d;
}

inline DomainBox unit_domain(int d) {
  return DomainBox{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
}

// The full regression model: r ensemble members over permuted dimension
// orders, a Gaussian likelihood with variance noise_var (standardized target
// space), the domain box, and the target standardizer. All member buttresses
// share per-dimension orders and prior scales.
struct BezierGpModel {
  std::vector<int> orders;  // per original dimension
  int r = 1;
  std::vector<Buttress> buttresses;
  double noise_var = 1.0;  // sigma^2 in standardized target space
  DomainBox domain;
  TargetStats target_stats;
  std::uint64_t seed = 0;
  bool perms_with_replacement = false;  // r exceeded d!, duplicates possible

  int d() const { return static_cast<int>(orders.size()); }
  double tau() const {
    double t = 1.0;
    for (int nu : orders) t *= static_cast<double>(nu + 1);
    return t;
  }
  std::int64_t clamp_events() const {
    std::int64_t total = 0;
    for (const auto& b : buttresses) total += b.clamp_events;
    return total;
  }
};

// Build a fresh model. The first permutation is always the identity (so
// small-dimension runs are exactly reproducible by hand); the rest are drawn
// uniformly, without replacement while r <= d! and with replacement (flagged)
// beyond that. The noise variance starts at 1/tau.
inline BezierGpModel new_model(const std::vector<int>& orders, int r, const DomainBox& domain,
                               std::uint64_t seed) {
  if (orders.empty()) throw InvalidArgument("at least one input dimension required");
  for (int nu : orders) {
    if (nu < 1) throw OrderOutOfRange(nu, kMaxAdjustOrder);
    if (nu > kMaxAdjustOrder) throw NonPositiveScale(nu);
  }
  if (r < 1) throw InvalidArgument("ensemble size must be >= 1");
  domain.validate();
  if (domain.lo.size() != static_cast<Eigen::Index>(orders.size()))
    throw InvalidDomain("domain dimension count does not match orders");

  BezierGpModel m;
  m.orders = orders;
  m.r = r;
  m.domain = domain;
  m.seed = seed;
  m.noise_var = std::max(1.0 / m.tau(), kNoiseFloor);

  const int d = m.d();
  double dfact = 1.0;
  for (int i = 2; i <= d && dfact <= 1e18; ++i) dfact *= i;
  m.perms_with_replacement = static_cast<double>(r) > dfact;

  Rng rng(seed);
  const PriorScale ps = make_prior_scale(orders, r);
  std::set<std::vector<int>> used;
  std::vector<std::vector<int>> perms;
  std::vector<int> identity(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) identity[static_cast<std::size_t>(i)] = i;
  perms.push_back(identity);
  used.insert(identity);
  while (static_cast<int>(perms.size()) < r) {
    std::vector<int> cand = rng.permutation(d);
    if (!m.perms_with_replacement && used.count(cand)) continue;
    used.insert(cand);
    perms.push_back(std::move(cand));
  }
  for (const auto& perm : perms) m.buttresses.push_back(make_buttress(perm, orders, ps, rng));
  return m;
}

// Posterior mean and variance of f at a unit-box point, summed over the
// ensemble. Standardized target space.
inline std::pair<double, double> predict_f_unit(const BezierGpModel& m,
                                                const Eigen::VectorXd& t) {
  double mean = 0.0, var = 0.0;
  for (const auto& b : m.buttresses) {
    mean += forward_mean(b, t);
    var += forward_var(b, t);
  }
  return {mean, var};
}

// Same, for a point in original feature units (strict domain mapping).
inline std::pair<double, double> predict_f(const BezierGpModel& m, const Eigen::VectorXd& x) {
  return predict_f_unit(m, m.domain.to_unit(x));
}

// Batched unit-box evaluation used by training and metrics paths.
struct BatchMoments {
  Eigen::VectorXd mean, var;  // per point, ensemble totals
};

inline BatchMoments eval_batch_unit(const BezierGpModel& m, const Eigen::MatrixXd& T) {
  BatchMoments out;
  out.mean = Eigen::VectorXd::Zero(T.rows());
  out.var = Eigen::VectorXd::Zero(T.rows());
  for (const auto& b : m.buttresses) {
    out.mean += forward_mean_batch(b, T);
    out.var += forward_var_batch(b, T);
  }
  return out;
}

// Mini-batched unbiased estimate of the expected log-likelihood over all
// n_total observations: (n_total/|batch|) * sum over the batch of
//   -1/2 [ log 2pi + log sigma^2 + ((y_j - mean_j)^2 + var_j) / sigma^2 ].
// Inputs live in the unit box with standardized targets.
inline double expected_loglik_unit(const BezierGpModel& m, const Eigen::MatrixXd& T,
                                   const Eigen::VectorXd& y, Eigen::Index n_total) {
  if (T.rows() < 1) throw EmptyData("expected_loglik needs a nonempty batch");
  if (T.rows() != y.size()) throw LengthMismatch("batch rows and targets differ");
  const BatchMoments bm = eval_batch_unit(m, T);
  double total = 0.0;
  for (Eigen::Index j = 0; j < T.rows(); ++j) {
    const double resid = y(j) - bm.mean(j);
    total += -0.5 * (std::log(2.0 * M_PI) + std::log(m.noise_var) +
                     (resid * resid + bm.var(j)) / m.noise_var);
  }
  return total * static_cast<double>(n_total) / static_cast<double>(T.rows());
}

inline double kl_total(const BezierGpModel& m) {
  double total = 0.0;
  for (const auto& b : m.buttresses) total += kl(b);
  return total;
}

// Mini-batched ELBO estimate: expected log-likelihood minus the full KL.
inline double elbo_unit(const BezierGpModel& m, const Eigen::MatrixXd& T,
                        const Eigen::VectorXd& y, Eigen::Index n_total) {
  return expected_loglik_unit(m, T, y, n_total) - kl_total(m);
}

// Predictive distribution in original target units: the standardized moments
// shifted/scaled back, with the noise variance added to the target variance.
inline Prediction predict_y_unit(const BezierGpModel& m, const Eigen::VectorXd& t) {
  const auto [mean, fvar] = predict_f_unit(m, t);
  Prediction p;
  const double s2 = m.target_stats.stddev * m.target_stats.stddev;
  p.mean = m.target_stats.mean + m.target_stats.stddev * mean;
  p.f_var = s2 * fvar;
  p.y_var = s2 * (fvar + m.noise_var);
  return p;
}

inline Prediction predict_y(const BezierGpModel& m, const Eigen::VectorXd& x) {
  return predict_y_unit(m, m.domain.to_unit(x));
}

// ---- persistence ----------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw SchemaMismatch("expected a nonempty matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw SchemaMismatch("ragged matrix rows");
    for (Eigen::Index jj = 0; jj < cols; ++jj)
      m(i, jj) = row.at(static_cast<std::size_t>(jj)).get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

}  // namespace detail

inline void save_model(const BezierGpModel& m, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["orders"] = m.orders;
  j["r"] = m.r;
  j["noise_var"] = m.noise_var;
  j["seed"] = m.seed;
  j["perms_with_replacement"] = m.perms_with_replacement;
  j["domain"] = {{"lo", detail::vector_to_json(m.domain.lo)},
                 {"hi", detail::vector_to_json(m.domain.hi)}};
  j["target_stats"] = {{"mean", m.target_stats.mean}, {"stddev", m.target_stats.stddev}};
  nlohmann::json members = nlohmann::json::array();
  for (const auto& b : m.buttresses) {
    nlohmann::json mb;
    mb["perm"] = b.perm;
    nlohmann::json ws = nlohmann::json::array(), vs = nlohmann::json::array();
    for (const auto& w : b.w) ws.push_back(detail::matrix_to_json(w));
    for (const auto& v : b.v) vs.push_back(detail::matrix_to_json(v));
    mb["w"] = std::move(ws);
    mb["v"] = std::move(vs);
    members.push_back(std::move(mb));
  }
  j["buttresses"] = std::move(members);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Load a model file. Prior scales are recomputed from the stored orders and
// ensemble size (the solve is deterministic), so predictions round-trip
// exactly up to the text representation of the weights, which is itself
// shortest-exact.
inline BezierGpModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 0, 0, std::string("invalid model document: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      throw SchemaMismatch("unsupported model format version");
    BezierGpModel m;
    m.orders = j.at("orders").get<std::vector<int>>();
    m.r = j.at("r").get<int>();
    m.noise_var = j.at("noise_var").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.perms_with_replacement = j.at("perms_with_replacement").get<bool>();
    m.domain.lo = detail::vector_from_json(j.at("domain").at("lo"));
    m.domain.hi = detail::vector_from_json(j.at("domain").at("hi"));
    m.domain.validate();
    m.target_stats.mean = j.at("target_stats").at("mean").get<double>();
    m.target_stats.stddev = j.at("target_stats").at("stddev").get<double>();

    const PriorScale ps = make_prior_scale(m.orders, m.r);
    const auto& members = j.at("buttresses");
    if (static_cast<int>(members.size()) != m.r)
      throw SchemaMismatch("stored ensemble size does not match r");
    Rng dummy(0);
    for (const auto& mb : members) {
      Buttress b = make_buttress(mb.at("perm").get<std::vector<int>>(), m.orders, ps, dummy);
      const auto& ws = mb.at("w");
      const auto& vs = mb.at("v");
      if (static_cast<int>(ws.size()) != b.depth() || static_cast<int>(vs.size()) != b.depth())
        throw SchemaMismatch("stored layer count does not match orders");
      for (int g = 0; g < b.depth(); ++g) {
        Eigen::MatrixXd w = detail::matrix_from_json(ws.at(static_cast<std::size_t>(g)));
        Eigen::MatrixXd v = detail::matrix_from_json(vs.at(static_cast<std::size_t>(g)));
        if (w.rows() != b.w[static_cast<std::size_t>(g)].rows() ||
            w.cols() != b.w[static_cast<std::size_t>(g)].cols() ||
            v.rows() != w.rows() || v.cols() != w.cols())
          throw SchemaMismatch("stored weight shapes do not match orders");
        b.w[static_cast<std::size_t>(g)] = std::move(w);
        b.v[static_cast<std::size_t>(g)] = std::move(v);
      }
      m.buttresses.push_back(std::move(b));
    }
    if (m.noise_var < kNoiseFloor) throw SchemaMismatch("stored noise variance below floor");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("model document missing fields: ") + e.what());
  }
}

}  // namespace bezgp
