#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "bezgp/model.hpp"
#include "bezgp/reference.hpp"
#include "bezgp/rng.hpp"
#include "bezgp/trainer.hpp"

namespace bezgp {

// Outcome of one self-check; the CLI prints one line per result.
struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// ---- shared helpers --------------------------------------------------------

// Negative mini-batch ELBO; the scalar objective all gradient checks probe.
inline double neg_elbo_objective(const BezierGpModel& m, const Eigen::MatrixXd& T,
                                 const Eigen::VectorXd& y, Eigen::Index n_total) {
  return -elbo_unit(m, T, y, n_total);
}

// Analytic gradients of the negative mini-batch ELBO for every buttress.
inline std::vector<ButtressGradients> neg_elbo_gradients(const BezierGpModel& m,
                                                         const Eigen::MatrixXd& T,
                                                         const Eigen::VectorXd& y,
                                                         Eigen::Index n_total) {
  const BatchMoments bm = eval_batch_unit(m, T);
  const double scale = static_cast<double>(n_total) / static_cast<double>(T.rows());
  std::vector<PointSensitivity> sens(static_cast<std::size_t>(T.rows()));
  for (Eigen::Index j = 0; j < T.rows(); ++j) {
    sens[static_cast<std::size_t>(j)].dmean = -scale * (y(j) - bm.mean(j)) / m.noise_var;
    sens[static_cast<std::size_t>(j)].dvar = scale * 0.5 / m.noise_var;
  }
  std::vector<ButtressGradients> out;
  out.reserve(m.buttresses.size());
  for (const auto& b : m.buttresses) out.push_back(backward(b, T, sens, 1.0));
  return out;
}

// Addressable parameter entry: buttress k, layer g, matrix cell, w or v.
struct ParamRef {
  int k = 0, layer = 0;
  Eigen::Index row = 0, col = 0;
  bool is_v = false;
};

inline std::vector<ParamRef> list_params(const BezierGpModel& m) {
  std::vector<ParamRef> refs;
  for (int k = 0; k < static_cast<int>(m.buttresses.size()); ++k) {
    const Buttress& b = m.buttresses[static_cast<std::size_t>(k)];
    for (int g = 0; g < b.depth(); ++g) {
      const auto& w = b.w[static_cast<std::size_t>(g)];
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          refs.push_back({k, g, i, j, false});
          refs.push_back({k, g, i, j, true});
        }
    }
  }
  return refs;
}

inline double& param_entry(BezierGpModel& m, const ParamRef& p) {
  Buttress& b = m.buttresses[static_cast<std::size_t>(p.k)];
  Eigen::MatrixXd& mat =
      p.is_v ? b.v[static_cast<std::size_t>(p.layer)] : b.w[static_cast<std::size_t>(p.layer)];
  return mat(p.row, p.col);
}

inline double gradient_entry(const std::vector<ButtressGradients>& grads, const ParamRef& p) {
  const ButtressGradients& g = grads[static_cast<std::size_t>(p.k)];
  const Eigen::MatrixXd& mat = p.is_v ? g.gv[static_cast<std::size_t>(p.layer)]
                                      : g.gw[static_cast<std::size_t>(p.layer)];
  return mat(p.row, p.col);
}

// Central finite difference of the negative ELBO along one parameter.
inline double fd_gradient(BezierGpModel& m, const ParamRef& p, const Eigen::MatrixXd& T,
                          const Eigen::VectorXd& y, Eigen::Index n_total, double h = 1e-5) {
  double& entry = param_entry(m, p);
  const double saved = entry;
  entry = saved + h;
  const double hi = neg_elbo_objective(m, T, y, n_total);
  entry = saved - h;
  const double lo = neg_elbo_objective(m, T, y, n_total);
  entry = saved;
  return (hi - lo) / (2.0 * h);
}

// Random small configuration with fully random weights, for oracle sweeps.
inline BezierGpModel random_small_model(Rng& rng, int max_d, int max_order, int max_r) {
  const int d = 1 + rng.below(max_d);
  std::vector<int> orders(static_cast<std::size_t>(d));
  for (int g = 0; g < d; ++g) orders[static_cast<std::size_t>(g)] = 1 + rng.below(max_order);
  const int r = 1 + rng.below(max_r);
  BezierGpModel m = new_model(orders, r, unit_domain(d),
                              static_cast<std::uint64_t>(rng.below(1 << 30)));
  for (auto& b : m.buttresses) {
    for (auto& w : b.w)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-1.0, 1.0);
    for (auto& v : b.v)
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.uniform(-1.0, 1.0);
  }
  return m;
}

// ---- individual checks -----------------------------------------------------

// Chain forward passes against explicit control-point enumeration.
inline CheckResult check_forward_oracle(std::uint64_t seed, int configs, int max_d,
                                        double tol = 1e-10) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    BezierGpModel m = random_small_model(rng, max_d, 3, 2);
    std::vector<DenseControlPoints> dense;
    for (const auto& b : m.buttresses) dense.push_back(materialize(b));
    for (int p = 0; p < 3; ++p) {
      Eigen::VectorXd x(m.d());
      for (Eigen::Index g = 0; g < x.size(); ++g) x(g) = rng.uniform01();
      const auto [mean, var] = predict_f_unit(m, x);
      double bmean = 0.0, bvar = 0.0;
      for (const auto& dc : dense) {
        bmean += brute_mean(dc, x);
        bvar += brute_var(dc, x);
      }
      worst = std::max(worst, std::abs(mean - bmean) / std::max(std::abs(bmean), 1e-9));
      worst = std::max(worst, std::abs(var - bvar) / std::max(std::abs(bvar), 1e-9));
    }
  }
  std::ostringstream det;
  det << configs << " configurations, worst relative error " << worst;
  return {"forward passes vs control-point enumeration", worst <= tol, det.str()};
}

// Closed-form KL against the explicit per-control-point sum, plus exactness
// at the prior.
inline CheckResult check_kl_oracle(std::uint64_t seed, int configs, int max_d,
                                   double tol = 1e-8) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    BezierGpModel m = random_small_model(rng, max_d, 3, 2);
    for (const auto& b : m.buttresses) {
      const double fast = kl(b);
      const double brute = brute_kl(materialize(b), b.scale);
      worst = std::max(worst, std::abs(fast - brute));
    }
  }
  // At the prior (zero means, zero log variance weights) the KL must be
  // exactly zero, not merely small.
  Rng rng2(seed + 1);
  BezierGpModel mz = random_small_model(rng2, max_d, 3, 2);
  for (auto& b : mz.buttresses) {
    for (auto& w : b.w) w.setZero();
    for (auto& v : b.v) v.setZero();
  }
  double at_prior = 0.0;
  for (const auto& b : mz.buttresses) at_prior = std::max(at_prior, std::abs(kl(b)));
  std::ostringstream det;
  det << configs << " configurations, worst absolute error " << worst
      << "; KL at the prior = " << at_prior;
  return {"closed-form KL vs control-point enumeration", worst <= tol && at_prior == 0.0,
          det.str()};
}

// Backward gradients against central finite differences on a small model.
// `max_entries` < 0 checks every parameter.
inline CheckResult check_gradient_fd(std::uint64_t seed, int max_entries,
                                     double rel_tol = 1e-4, double abs_tol = 1e-7) {
  Rng rng(seed);
  BezierGpModel m = new_model({2, 3}, 2, unit_domain(2), seed);
  for (auto& b : m.buttresses) {
    for (auto& w : b.w)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-0.8, 0.8);
    for (auto& v : b.v)
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.uniform(-0.8, 0.8);
  }
  const Eigen::Index bsz = 5;
  Eigen::MatrixXd T(bsz, m.d());
  Eigen::VectorXd y(bsz);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    for (Eigen::Index g = 0; g < m.d(); ++g) T(i, g) = rng.uniform01();
    y(i) = rng.uniform(-2.0, 2.0);
  }

  const auto grads = neg_elbo_gradients(m, T, y, bsz);
  std::vector<ParamRef> refs = list_params(m);
  if (max_entries >= 0 && static_cast<int>(refs.size()) > max_entries) {
    std::vector<ParamRef> picked;
    for (int i = 0; i < max_entries; ++i)
      picked.push_back(refs[static_cast<std::size_t>(rng.below(static_cast<int>(refs.size())))]);
    refs = picked;
  }

  double worst_rel = 0.0;
  int failures = 0;
  for (const auto& p : refs) {
    const double an = gradient_entry(grads, p);
    const double fd = fd_gradient(m, p, T, y, bsz);
    const double diff = std::abs(an - fd);
    const double denom = std::max(std::abs(an), std::abs(fd));
    if (diff > abs_tol && diff > rel_tol * denom) ++failures;
    if (denom > 0) worst_rel = std::max(worst_rel, diff / std::max(denom, abs_tol));
  }
  std::ostringstream det;
  det << refs.size() << " parameters checked, " << failures
      << " outside tolerance, worst relative deviation " << worst_rel;
  return {"backward gradients vs central finite differences", failures == 0, det.str()};
}

// Variational objective never exceeds the exact log evidence under the same
// prior and noise variance.
inline CheckResult check_elbo_bound(std::uint64_t seed, int instances, Eigen::Index max_n,
                                    int phase1_iters, int phase2_iters) {
  Rng rng(seed);
  double worst_excess = -1e300;
  for (int c = 0; c < instances; ++c) {
    const int d = 1 + rng.below(2);
    std::vector<int> orders(static_cast<std::size_t>(d));
    for (int g = 0; g < d; ++g) orders[static_cast<std::size_t>(g)] = 1 + rng.below(3);
    const Eigen::Index n = 20 + rng.below(static_cast<int>(max_n) - 19);
    Eigen::MatrixXd T(n, d);
    Eigen::VectorXd y(n);
    const double a = rng.uniform(2.0, 9.0), b = rng.uniform(0.0, 3.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int g = 0; g < d; ++g) T(i, g) = rng.uniform01();
      y(i) = std::sin(a * T(i, 0) + b) + 0.3 * (rng.uniform01() - 0.5);
    }
    const TargetStats st = fit_target_stats(y);
    const Eigen::VectorXd ys = standardize(y, st);

    BezierGpModel m = new_model(orders, 1, unit_domain(d), seed + static_cast<std::uint64_t>(c));
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.phase1_iters = phase1_iters;
    cfg.phase2_iters = phase2_iters;
    cfg.seed = seed + static_cast<std::uint64_t>(c);
    train_two_phase(m, T, ys, cfg);

    const double bound = exact_log_evidence(T, ys, orders, m.noise_var, 1);
    const double value = elbo_unit(m, T, ys, n);
    worst_excess = std::max(worst_excess, value - bound);
  }
  std::ostringstream det;
  det << instances << " instances, worst (ELBO - exact log evidence) = " << worst_excess
      << " (must stay <= 1e-6)";
  return {"ELBO below exact log evidence", worst_excess <= 1e-6, det.str()};
}

// The suite behind the verify command. Quick mode restricts to d <= 2 and
// fewer, smaller instances so it finishes in seconds.
inline std::vector<CheckResult> run_verification(std::uint64_t seed, bool quick) {
  std::vector<CheckResult> results;
  const int configs = quick ? 25 : 100;
  const int max_d = quick ? 2 : 3;
  results.push_back(check_forward_oracle(seed, configs, max_d));
  results.push_back(check_kl_oracle(seed, configs, max_d));
  results.push_back(check_gradient_fd(seed, quick ? 20 : -1));
  results.push_back(check_elbo_bound(seed, quick ? 3 : 10, quick ? 60 : 200,
                                     quick ? 150 : 300, quick ? 80 : 150));
  return results;
}

}  // namespace bezgp
