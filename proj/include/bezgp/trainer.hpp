#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "bezgp/errors.hpp"
#include "bezgp/model.hpp"
#include "bezgp/rng.hpp"

namespace bezgp {

// The two-phase schedule: phase 1 fits all buttress weights with the noise
// variance frozen at its 1/tau initialization; phase 2 fits log(noise
// variance) alone with every variational parameter frozen.
struct TrainConfig {
  int batch_size = 500;
  int phase1_iters = 10000;
  int phase2_iters = 10000;
  double lr1 = 0.001;
  double lr2 = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int eval_every = 50;  // history cadence

  void validate() const {
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (phase1_iters < 0 || phase2_iters < 0)
      throw InvalidArgument("iteration counts must be >= 0");
    if (!(lr1 > 0.0) || !(lr2 > 0.0)) throw InvalidArgument("learning rates must be positive");
    if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
  }
};

struct FitReport {
  struct Entry {
    long iteration;  // 1-based within its phase
    int phase;       // 1 or 2
    double elbo;     // mini-batch estimate at that iteration
  };
  std::vector<Entry> history;
  double final_noise_var = 0.0;
  double phase1_seconds = 0.0;
  double phase2_seconds = 0.0;
  std::int64_t clamp_events = 0;
};

// Export the ELBO history as a tab-separated table (iteration, phase, elbo).
// Deliberately contains nothing run-dependent beyond the optimization itself,
// so identical runs write identical bytes.
inline void save_fit_report(const FitReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "iteration\tphase\telbo\n";
  for (const auto& e : rep.history)
    out << e.iteration << '\t' << e.phase << '\t' << detail::format_double(e.elbo) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

// First/second moment accumulators for one parameter block.
struct AdamState {
  Eigen::MatrixXd m, v;
  long t = 0;

  static AdamState like(const Eigen::MatrixXd& p) {
    return AdamState{Eigen::MatrixXd::Zero(p.rows(), p.cols()),
                     Eigen::MatrixXd::Zero(p.rows(), p.cols()), 0};
  }
};

// One Adam update with bias correction, in place.
inline void adam_step(Eigen::MatrixXd& params, const Eigen::MatrixXd& grads, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols() ||
      params.rows() != state.m.rows() || params.cols() != state.m.cols())
    throw ShapeMismatch("adam_step shapes do not match");
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grads;
  state.v = beta2 * state.v + (1.0 - beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + eps);
}

// Seeded epoch stream: each epoch is one shuffle of 0..n-1 cut into
// consecutive batches; a short final batch is kept, so every index appears
// exactly once per epoch.
class MinibatchStream {
 public:
  MinibatchStream(Eigen::Index n, int batch_size, std::uint64_t seed)
      : n_(static_cast<int>(n)), batch_(std::min<Eigen::Index>(batch_size, n)), rng_(seed) {
    if (n < 1) throw EmptyData("minibatch stream needs at least one row");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    refill();
  }

  const std::vector<int>& next() {
    if (pos_ >= n_) refill();
    const int take = std::min<int>(static_cast<int>(batch_), n_ - pos_);
    current_.assign(order_.begin() + pos_, order_.begin() + pos_ + take);
    pos_ += take;
    return current_;
  }

 private:
  void refill() {
    order_ = rng_.permutation(n_);
    pos_ = 0;
  }

  int n_;
  Eigen::Index batch_;
  Rng rng_;
  std::vector<int> order_;
  std::vector<int> current_;
  int pos_ = 0;
};

namespace detail {

struct BatchView {
  Eigen::MatrixXd T;  // batch rows
  Eigen::VectorXd y;
};

inline BatchView gather(const Eigen::MatrixXd& T, const Eigen::VectorXd& y,
                        const std::vector<int>& idx) {
  BatchView b;
  b.T.resize(static_cast<Eigen::Index>(idx.size()), T.cols());
  b.y.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    b.T.row(static_cast<Eigen::Index>(i)) = T.row(idx[i]);
    b.y(static_cast<Eigen::Index>(i)) = y(idx[i]);
  }
  return b;
}

}  // namespace detail

// Run the two-phase schedule on data already mapped to the unit box with
// standardized targets. The model is mutated in place; the report carries the
// per-iteration ELBO estimates at the configured cadence.
inline FitReport train_two_phase(BezierGpModel& model, const Eigen::MatrixXd& T,
                                 const Eigen::VectorXd& y, const TrainConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = T.rows();
  if (n < 1) throw EmptyData("training data is empty");
  if (y.size() != n) throw LengthMismatch("training rows and targets differ");
  if (T.cols() != model.d()) throw ShapeMismatch("training columns do not match model dimension");
  if (T.minCoeff() < 0.0 || T.maxCoeff() > 1.0)
    throw InvalidArgument("training inputs must lie in the unit box");

  FitReport rep;
  const std::int64_t clamp_before = model.clamp_events();
  using clock = std::chrono::steady_clock;

  // Phase 1: all buttress weights, noise variance untouched.
  {
    const auto t0 = clock::now();
    MinibatchStream stream(n, cfg.batch_size, cfg.seed);
    std::vector<std::vector<AdamState>> sw(model.buttresses.size()),
        sv(model.buttresses.size());
    for (std::size_t k = 0; k < model.buttresses.size(); ++k) {
      for (const auto& w : model.buttresses[k].w) sw[k].push_back(AdamState::like(w));
      for (const auto& v : model.buttresses[k].v) sv[k].push_back(AdamState::like(v));
    }

    for (int it = 1; it <= cfg.phase1_iters; ++it) {
      const std::vector<int>& idx = stream.next();
      const detail::BatchView batch = detail::gather(T, y, idx);
      const Eigen::Index bsz = batch.T.rows();
      const double scale = static_cast<double>(n) / static_cast<double>(bsz);

      const BatchMoments bm = eval_batch_unit(model, batch.T);

      if ((it - 1) % cfg.eval_every == 0) {
        double ell = 0.0;
        for (Eigen::Index j = 0; j < bsz; ++j) {
          const double resid = batch.y(j) - bm.mean(j);
          ell += -0.5 * (std::log(2.0 * M_PI) + std::log(model.noise_var) +
                         (resid * resid + bm.var(j)) / model.noise_var);
        }
        rep.history.push_back({it, 1, ell * scale - kl_total(model)});
      }

      // Sensitivities of the negative ELBO; shared across the ensemble since
      // means and variances enter additively.
      std::vector<PointSensitivity> sens(static_cast<std::size_t>(bsz));
      for (Eigen::Index j = 0; j < bsz; ++j) {
        sens[static_cast<std::size_t>(j)].dmean =
            -scale * (batch.y(j) - bm.mean(j)) / model.noise_var;
        sens[static_cast<std::size_t>(j)].dvar = scale * 0.5 / model.noise_var;
      }

      for (std::size_t k = 0; k < model.buttresses.size(); ++k) {
        Buttress& b = model.buttresses[k];
        ButtressGradients g;
        try {
          g = backward(b, batch.T, sens, 1.0);
        } catch (const NonFiniteGradient& e) {
          throw NonFiniteGradient(std::string(e.what()) + " at phase-1 iteration " +
                                  std::to_string(it));
        }
        for (int layer = 0; layer < b.depth(); ++layer) {
          adam_step(b.w[static_cast<std::size_t>(layer)], g.gw[static_cast<std::size_t>(layer)],
                    sw[k][static_cast<std::size_t>(layer)], cfg.lr1, cfg.adam_beta1,
                    cfg.adam_beta2, cfg.adam_eps);
          adam_step(b.v[static_cast<std::size_t>(layer)], g.gv[static_cast<std::size_t>(layer)],
                    sv[k][static_cast<std::size_t>(layer)], cfg.lr1, cfg.adam_beta1,
                    cfg.adam_beta2, cfg.adam_eps);
        }
      }
    }
    rep.phase1_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  }

  // Phase 2: log noise variance only. The variational parameters are frozen,
  // so per-point moments are computed once for the whole set and reused.
  {
    const auto t0 = clock::now();
    if (cfg.phase2_iters > 0) {
      const BatchMoments all = eval_batch_unit(model, T);
      const double kl_const = kl_total(model);
      MinibatchStream stream(n, cfg.batch_size, cfg.seed + 1);
      Eigen::MatrixXd ls(1, 1);
      ls(0, 0) = std::log(model.noise_var);
      AdamState state = AdamState::like(ls);

      for (int it = 1; it <= cfg.phase2_iters; ++it) {
        const std::vector<int>& idx = stream.next();
        const Eigen::Index bsz = static_cast<Eigen::Index>(idx.size());
        const double scale = static_cast<double>(n) / static_cast<double>(bsz);
        const double sigma2 = model.noise_var;

        double sum_stat = 0.0;  // sum over batch of (resid^2 + var)
        for (int id : idx) {
          const double resid = y(id) - all.mean(id);
          sum_stat += resid * resid + all.var(id);
        }

        if ((it - 1) % cfg.eval_every == 0) {
          const double ell = -0.5 * (static_cast<double>(bsz) *
                                         (std::log(2.0 * M_PI) + std::log(sigma2)) +
                                     sum_stat / sigma2);
          rep.history.push_back({it, 2, ell * scale - kl_const});
        }

        // d(negative ELBO)/d(log sigma^2).
        Eigen::MatrixXd grad(1, 1);
        grad(0, 0) = scale * 0.5 * (static_cast<double>(bsz) - sum_stat / sigma2);
        if (!std::isfinite(grad(0, 0)))
          throw NonFiniteGradient("nonfinite noise gradient at phase-2 iteration " +
                                  std::to_string(it));
        adam_step(ls, grad, state, cfg.lr2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        model.noise_var = std::max(std::exp(ls(0, 0)), kNoiseFloor);
        ls(0, 0) = std::log(model.noise_var);
      }
    }
    rep.phase2_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  }

  rep.final_noise_var = model.noise_var;
  rep.clamp_events = model.clamp_events() - clamp_before;
  return rep;
}

}  // namespace bezgp
