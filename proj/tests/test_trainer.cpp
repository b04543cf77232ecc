#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "bezgp/data.hpp"
#include "bezgp/model.hpp"
#include "bezgp/trainer.hpp"
#include "bezgp/verify.hpp"

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/bezgp_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Unit-box training set from the two-band synthetic generator.
struct UnitData {
  Eigen::MatrixXd T;
  Eigen::VectorXd y;
};

UnitData synthetic_unit(std::uint64_t seed) {
  const bezgp::Dataset ds = bezgp::gen_synthetic_1d(seed);
  UnitData u;
  u.T = ds.X;  // already within [0,1]
  u.y = bezgp::standardize(ds.y, bezgp::fit_target_stats(ds.y));
  return u;
}

std::vector<Eigen::MatrixXd> snapshot_w(const bezgp::BezierGpModel& m) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& b : m.buttresses)
    for (const auto& w : b.w) out.push_back(w);
  return out;
}

std::vector<Eigen::MatrixXd> snapshot_v(const bezgp::BezierGpModel& m) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& b : m.buttresses)
    for (const auto& v : b.v) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("training config validation rejects bad values") {
  bezgp::TrainConfig cfg;
  cfg.batch_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(), bezgp::InvalidArgument);
  cfg = bezgp::TrainConfig{};
  cfg.phase1_iters = -1;
  REQUIRE_THROWS_AS(cfg.validate(), bezgp::InvalidArgument);
  cfg = bezgp::TrainConfig{};
  cfg.lr2 = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), bezgp::InvalidArgument);
  cfg = bezgp::TrainConfig{};
  cfg.eval_every = 0;
  REQUIRE_THROWS_AS(cfg.validate(), bezgp::InvalidArgument);
}

TEST_CASE("zero iterations leave the model untouched and the history empty") {
  const UnitData u = synthetic_unit(0);
  bezgp::BezierGpModel m = bezgp::new_model({4}, 1, bezgp::unit_domain(1), 1);
  const auto w0 = snapshot_w(m);
  const auto v0 = snapshot_v(m);
  const double noise0 = m.noise_var;

  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_iters = 0;
  const bezgp::FitReport rep = bezgp::train_two_phase(m, u.T, u.y, cfg);

  REQUIRE(rep.history.empty());
  REQUIRE(m.noise_var == noise0);
  REQUIRE(snapshot_w(m) == w0);
  REQUIRE(snapshot_v(m) == v0);
  REQUIRE(rep.final_noise_var == noise0);
}

TEST_CASE("training rejects empty, mismatched, or out-of-box data") {
  bezgp::BezierGpModel m = bezgp::new_model({2}, 1, bezgp::unit_domain(1), 2);
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 1;
  cfg.phase2_iters = 0;

  Eigen::MatrixXd empty(0, 1);
  Eigen::VectorXd none(0);
  REQUIRE_THROWS_AS(bezgp::train_two_phase(m, empty, none, cfg), bezgp::EmptyData);

  Eigen::MatrixXd T(2, 1);
  T << 0.2, 0.8;
  Eigen::VectorXd y1(1);
  y1 << 0.0;
  REQUIRE_THROWS_AS(bezgp::train_two_phase(m, T, y1, cfg), bezgp::LengthMismatch);

  Eigen::MatrixXd outside(2, 1);
  outside << 0.2, 1.8;
  Eigen::VectorXd y2(2);
  y2 << 0.0, 0.0;
  REQUIRE_THROWS_AS(bezgp::train_two_phase(m, outside, y2, cfg), bezgp::InvalidArgument);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  Eigen::MatrixXd p(2, 2);
  p << 1.0, -2.0, 0.5, 3.0;
  const Eigen::MatrixXd before = p;
  bezgp::AdamState st = bezgp::AdamState::like(p);
  bezgp::adam_step(p, Eigen::MatrixXd::Zero(2, 2), st, 0.1);
  REQUIRE(p == before);
  REQUIRE(st.t == 1);
}

TEST_CASE("adam matches a hand-computed two-step trace") {
  // theta0=1, gradient 0.5 at both steps, lr=0.1, betas (0.9, 0.999),
  // eps=1e-8. By hand: m1=0.05, v1=0.00025, mhat=0.5, vhat=0.25,
  // theta1 = 1 - 0.1*0.5/(0.5+1e-8); second step repeats the same update.
  Eigen::MatrixXd p(1, 1);
  p << 1.0;
  Eigen::MatrixXd g(1, 1);
  g << 0.5;
  bezgp::AdamState st = bezgp::AdamState::like(p);
  bezgp::adam_step(p, g, st, 0.1);
  REQUIRE(p(0, 0) == Catch::Approx(0.9000000019999999).margin(1e-12));
  REQUIRE(st.m(0, 0) == Catch::Approx(0.05).margin(1e-15));
  REQUIRE(st.v(0, 0) == Catch::Approx(0.00025).margin(1e-18));
  bezgp::adam_step(p, g, st, 0.1);
  REQUIRE(p(0, 0) == Catch::Approx(0.8000000040000005).margin(1e-12));
  REQUIRE(st.m(0, 0) == Catch::Approx(0.095).margin(1e-15));
  REQUIRE(st.v(0, 0) == Catch::Approx(0.00049975).margin(1e-18));
}

TEST_CASE("adam step size settles at the learning rate under a constant gradient") {
  Eigen::MatrixXd p(1, 1);
  p << 0.0;
  Eigen::MatrixXd g(1, 1);
  g << 0.25;
  bezgp::AdamState st = bezgp::AdamState::like(p);
  double prev = p(0, 0);
  double delta = 0.0;
  for (int t = 0; t < 10; ++t) {
    bezgp::adam_step(p, g, st, 0.1);
    delta = p(0, 0) - prev;
    prev = p(0, 0);
  }
  REQUIRE(delta == Catch::Approx(-0.1).margin(1e-6));  // lr * sign(g)

  // and symmetric for a negative gradient
  g << -0.25;
  bezgp::AdamState st2 = bezgp::AdamState::like(p);
  prev = p(0, 0);
  for (int t = 0; t < 10; ++t) {
    bezgp::adam_step(p, g, st2, 0.1);
    delta = p(0, 0) - prev;
    prev = p(0, 0);
  }
  REQUIRE(delta == Catch::Approx(0.1).margin(1e-6));
}

TEST_CASE("adam rejects mismatched shapes") {
  Eigen::MatrixXd p(2, 2);
  p.setZero();
  bezgp::AdamState st = bezgp::AdamState::like(p);
  REQUIRE_THROWS_AS(bezgp::adam_step(p, Eigen::MatrixXd::Zero(2, 3), st, 0.1),
                    bezgp::ShapeMismatch);
}

TEST_CASE("an epoch of batches of four covers ten indices as 4+4+2") {
  bezgp::MinibatchStream stream(10, 4, 3);
  std::multiset<int> seen;
  const std::vector<int> b1 = stream.next();
  REQUIRE(b1.size() == 4);
  seen.insert(b1.begin(), b1.end());
  const std::vector<int> b2 = stream.next();
  REQUIRE(b2.size() == 4);
  seen.insert(b2.begin(), b2.end());
  const std::vector<int> b3 = stream.next();
  REQUIRE(b3.size() == 2);
  seen.insert(b3.begin(), b3.end());
  REQUIRE(seen.size() == 10);
  for (int i = 0; i < 10; ++i) REQUIRE(seen.count(i) == 1);
}

TEST_CASE("the batch stream is deterministic in its seed") {
  bezgp::MinibatchStream a(10, 4, 5);
  bezgp::MinibatchStream b(10, 4, 5);
  for (int k = 0; k < 7; ++k) REQUIRE(a.next() == b.next());
  bezgp::MinibatchStream c(10, 4, 6);
  bool any_difference = false;
  bezgp::MinibatchStream a2(10, 4, 5);
  for (int k = 0; k < 7; ++k)
    if (a2.next() != c.next()) any_difference = true;
  REQUIRE(any_difference);
}

TEST_CASE("a batch size beyond n degrades to full batches") {
  bezgp::MinibatchStream stream(3, 100, 7);
  REQUIRE(stream.next().size() == 3);
  REQUIRE(stream.next().size() == 3);
  REQUIRE_THROWS_AS(bezgp::MinibatchStream(0, 4, 0), bezgp::EmptyData);
}

TEST_CASE("size-weighted batch estimates average to the full-batch value") {
  bezgp::Rng rng(8);
  bezgp::BezierGpModel m = bezgp::random_small_model(rng, 2, 3, 2);
  const Eigen::Index n = 10;
  Eigen::MatrixXd T(n, m.d());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index g = 0; g < m.d(); ++g) T(i, g) = rng.uniform01();
    y(i) = rng.uniform(-2.0, 2.0);
  }
  const double full = bezgp::expected_loglik_unit(m, T, y, n);

  bezgp::MinibatchStream stream(n, 4, 9);
  double weighted = 0.0;
  Eigen::Index counted = 0;
  while (counted < n) {
    const std::vector<int> idx = stream.next();
    Eigen::MatrixXd bt(static_cast<Eigen::Index>(idx.size()), m.d());
    Eigen::VectorXd by(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      bt.row(static_cast<Eigen::Index>(i)) = T.row(idx[i]);
      by(static_cast<Eigen::Index>(i)) = y(idx[i]);
    }
    const double est = bezgp::expected_loglik_unit(m, bt, by, n);
    weighted += est * static_cast<double>(idx.size()) / static_cast<double>(n);
    counted += static_cast<Eigen::Index>(idx.size());
  }
  REQUIRE(weighted == Catch::Approx(full).margin(1e-9));
}

TEST_CASE("phase one never touches the noise variance") {
  const UnitData u = synthetic_unit(1);
  bezgp::BezierGpModel m = bezgp::new_model({6}, 1, bezgp::unit_domain(1), 3);
  const double noise0 = m.noise_var;
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 30;
  cfg.phase2_iters = 0;
  cfg.batch_size = 16;
  bezgp::train_two_phase(m, u.T, u.y, cfg);
  REQUIRE(m.noise_var == noise0);
}

TEST_CASE("phase two never touches the variational parameters") {
  const UnitData u = synthetic_unit(2);
  bezgp::BezierGpModel m = bezgp::new_model({6}, 1, bezgp::unit_domain(1), 4);
  const auto w0 = snapshot_w(m);
  const auto v0 = snapshot_v(m);
  const double noise0 = m.noise_var;
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_iters = 30;
  bezgp::train_two_phase(m, u.T, u.y, cfg);
  REQUIRE(snapshot_w(m) == w0);
  REQUIRE(snapshot_v(m) == v0);
  REQUIRE(m.noise_var != noise0);
}

TEST_CASE("phase two converges to the residual-moment average") {
  const UnitData u = synthetic_unit(3);
  bezgp::Rng rng(10);
  bezgp::BezierGpModel m = bezgp::new_model({5}, 1, bezgp::unit_domain(1), 5);
  for (auto& b : m.buttresses) {
    for (auto& w : b.w)
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.uniform(-0.8, 0.8);
    for (auto& v : b.v)
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-0.8, 0.8);
  }

  // With the moments frozen, the objective is maximized in closed form by the
  // mean of (residual^2 + predictive variance) over the training set.
  const bezgp::BatchMoments bm = bezgp::eval_batch_unit(m, u.T);
  double target = 0.0;
  for (Eigen::Index j = 0; j < u.T.rows(); ++j) {
    const double resid = u.y(j) - bm.mean(j);
    target += resid * resid + bm.var(j);
  }
  target /= static_cast<double>(u.T.rows());

  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_iters = 3000;
  cfg.batch_size = 64;  // full batch
  const bezgp::FitReport rep = bezgp::train_two_phase(m, u.T, u.y, cfg);
  REQUIRE(std::abs(m.noise_var - target) <= 0.1 * target);
  REQUIRE(rep.final_noise_var == m.noise_var);
  for (const auto& e : rep.history) REQUIRE(e.phase == 2);
}

TEST_CASE("the noise floor is enforced when the data are noiseless") {
  bezgp::BezierGpModel m = bezgp::new_model({2}, 1, bezgp::unit_domain(1), 6);
  for (auto& b : m.buttresses) {
    for (auto& w : b.w) w.setZero();
    for (auto& v : b.v) v.setConstant(-30.0);
  }
  Eigen::MatrixXd T(4, 1);
  T << 0.1, 0.4, 0.6, 0.9;
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(4);  // exactly the mean
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_iters = 3000;
  bezgp::train_two_phase(m, T, y, cfg);
  REQUIRE(m.noise_var >= 1e-8);
  REQUIRE(m.noise_var <= 1.0000001e-8);
}

TEST_CASE("the ELBO trend improves over ten thousand iterations") {
  const UnitData u = synthetic_unit(0);
  bezgp::BezierGpModel m = bezgp::new_model({20}, 1, bezgp::unit_domain(1), 0);
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 10000;
  cfg.phase2_iters = 0;
  const bezgp::FitReport rep = bezgp::train_two_phase(m, u.T, u.y, cfg);
  REQUIRE(rep.history.size() == 200);  // 10000 / eval_every(50)

  // Smooth each end of the trace over a 200-iteration window.
  double early = 0.0, late = 0.0;
  int early_n = 0, late_n = 0;
  for (const auto& e : rep.history) {
    if (e.iteration <= 200) {
      early += e.elbo;
      ++early_n;
    }
    if (e.iteration > 9800) {
      late += e.elbo;
      ++late_n;
    }
  }
  REQUIRE(early_n == 4);
  REQUIRE(late_n == 4);
  REQUIRE(late / late_n > early / early_n);
}

TEST_CASE("history cadence records ceil(iters / eval_every) entries per phase") {
  const UnitData u = synthetic_unit(4);
  bezgp::BezierGpModel m = bezgp::new_model({3}, 1, bezgp::unit_domain(1), 7);
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 103;
  cfg.phase2_iters = 7;
  cfg.eval_every = 10;
  const bezgp::FitReport rep = bezgp::train_two_phase(m, u.T, u.y, cfg);
  long p1 = 0, p2 = 0;
  for (const auto& e : rep.history) (e.phase == 1 ? p1 : p2)++;
  REQUIRE(p1 == 11);  // iterations 1, 11, ..., 101
  REQUIRE(p2 == 1);   // iteration 1
  REQUIRE(rep.history.front().iteration == 1);
  REQUIRE(rep.history[10].iteration == 101);
}

TEST_CASE("identical configuration and data reproduce the fit bitwise") {
  const UnitData u = synthetic_unit(5);
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 120;
  cfg.phase2_iters = 40;
  cfg.batch_size = 16;
  cfg.seed = 9;

  bezgp::BezierGpModel a = bezgp::new_model({8}, 2, bezgp::unit_domain(1), 11);
  bezgp::BezierGpModel b = bezgp::new_model({8}, 2, bezgp::unit_domain(1), 11);
  const bezgp::FitReport ra = bezgp::train_two_phase(a, u.T, u.y, cfg);
  const bezgp::FitReport rb = bezgp::train_two_phase(b, u.T, u.y, cfg);

  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    REQUIRE(ra.history[i].iteration == rb.history[i].iteration);
    REQUIRE(ra.history[i].phase == rb.history[i].phase);
    REQUIRE(ra.history[i].elbo == rb.history[i].elbo);
  }
  REQUIRE(a.noise_var == b.noise_var);
  REQUIRE(snapshot_w(a) == snapshot_w(b));
  REQUIRE(snapshot_v(a) == snapshot_v(b));

  TempFile fa("report_a.tsv"), fb("report_b.tsv");
  bezgp::save_fit_report(ra, fa.path);
  bezgp::save_fit_report(rb, fb.path);
  const std::string text = slurp(fa.path);
  REQUIRE(text == slurp(fb.path));
  REQUIRE(text.rfind("iteration\tphase\telbo\n", 0) == 0);
  REQUIRE(std::count(text.begin(), text.end(), '\n') ==
          static_cast<long>(ra.history.size()) + 1);
}

TEST_CASE("a gradient overflow aborts with the offending iteration") {
  bezgp::BezierGpModel m = bezgp::new_model({2}, 1, bezgp::unit_domain(1), 12);
  Eigen::MatrixXd T(2, 1);
  T << 0.25, 0.75;
  Eigen::VectorXd y(2);
  y << 1e308, -1e308;
  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 3;
  cfg.phase2_iters = 0;
  try {
    bezgp::train_two_phase(m, T, y, cfg);
    FAIL("expected NonFiniteGradient");
  } catch (const bezgp::NonFiniteGradient& e) {
    REQUIRE(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
}
