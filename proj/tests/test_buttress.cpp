#include <catch2/catch_amalgamated.hpp>

#include "bezgp/buttress.hpp"
#include "bezgp/reference.hpp"
#include "bezgp/rng.hpp"

namespace {

// A buttress with explicitly chosen weights, identity permutation.
bezgp::Buttress explicit_buttress(const std::vector<int>& orders,
                                  const std::vector<Eigen::MatrixXd>& w, int r = 1) {
  std::vector<int> perm(orders.size());
  for (std::size_t i = 0; i < orders.size(); ++i) perm[i] = static_cast<int>(i);
  bezgp::Rng rng(0);
  bezgp::Buttress b =
      bezgp::make_buttress(perm, orders, bezgp::make_prior_scale(orders, r), rng);
  for (std::size_t g = 0; g < w.size(); ++g) b.w[g] = w[g];
  return b;
}

bezgp::Buttress random_buttress(const std::vector<int>& orders, std::uint64_t seed,
                                double wmag = 1.0, double vmag = 1.0) {
  std::vector<int> perm(orders.size());
  for (std::size_t i = 0; i < orders.size(); ++i) perm[i] = static_cast<int>(i);
  bezgp::Rng rng(seed);
  bezgp::Buttress b =
      bezgp::make_buttress(perm, orders, bezgp::make_prior_scale(orders, 1), rng);
  for (auto& w : b.w)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-wmag, wmag);
  for (auto& v : b.v)
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.uniform(-vmag, vmag);
  return b;
}

}  // namespace

TEST_CASE("sum of all means collapses all-ones weights to the grid size") {
  std::vector<int> perm{0, 1, 2};
  bezgp::Rng rng(1);
  bezgp::Buttress b =
      bezgp::make_buttress(perm, {2, 3, 3}, bezgp::make_prior_scale({2, 3, 3}, 1), rng);
  for (auto& w : b.w) w.setOnes();
  REQUIRE(bezgp::sum_all_means(b) == Catch::Approx(48.0).margin(1e-12));
  for (auto& w : b.w) w.setZero();
  REQUIRE(bezgp::sum_all_means(b) == 0.0);
}

TEST_CASE("sum of all means matches the four-path hand enumeration") {
  // w1 = (2,3), w2 = [[5,7],[11,13]]: paths 2*5 + 2*7 + 3*11 + 3*13 = 96.
  Eigen::MatrixXd w1(1, 2), w2(2, 2);
  w1 << 2, 3;
  w2 << 5, 7, 11, 13;
  const bezgp::Buttress b = explicit_buttress({1, 1}, {w1, w2});
  REQUIRE(bezgp::sum_all_means(b) == Catch::Approx(96.0).margin(1e-12));
}

TEST_CASE("forward mean is 1 when every weight is 1") {
  std::vector<int> perm{0, 1};
  bezgp::Rng rng(2);
  bezgp::Buttress b = bezgp::make_buttress(perm, {2, 3}, bezgp::make_prior_scale({2, 3}, 1), rng);
  for (auto& w : b.w) w.setOnes();
  bezgp::Rng xr(3);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd x(2);
    x << xr.uniform01(), xr.uniform01();
    REQUIRE(bezgp::forward_mean(b, x) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("forward mean at a corner picks out the corner control point") {
  Eigen::MatrixXd w1(1, 2), w2(2, 2);
  w1 << 2, 3;
  w2 << 5, 7, 11, 13;
  const bezgp::Buttress b = explicit_buttress({1, 1}, {w1, w2});
  Eigen::VectorXd x(2);
  x << 0.0, 0.0;
  REQUIRE(bezgp::forward_mean(b, x) == Catch::Approx(10.0).margin(1e-12));  // 2*5
  x << 1.0, 1.0;
  REQUIRE(bezgp::forward_mean(b, x) == Catch::Approx(39.0).margin(1e-12));  // 3*13
}

TEST_CASE("forward mean matches brute-force enumeration on a 3-D instance") {
  const bezgp::Buttress b = random_buttress({2, 2, 2}, 17);
  const bezgp::DenseControlPoints dense = bezgp::materialize(b);
  bezgp::Rng xr(18);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(3);
    x << xr.uniform01(), xr.uniform01(), xr.uniform01();
    const double fast = bezgp::forward_mean(b, x);
    const double brute = bezgp::brute_mean(dense, x);
    REQUIRE(std::abs(fast - brute) <= 1e-10 * std::max(std::abs(brute), 1e-9));
  }
}

TEST_CASE("prior variance is exactly 1 at grid knots and near 1 elsewhere") {
  std::vector<int> perm{0};
  bezgp::Rng rng(4);
  bezgp::Buttress b = bezgp::make_buttress(perm, {20}, bezgp::make_prior_scale({20}, 1), rng);
  // v == 0: variational variance equals the adjusted prior.
  for (int i = 0; i <= 20; ++i) {
    Eigen::VectorXd x(1);
    x << double(i) / 20.0;
    REQUIRE(bezgp::forward_var(b, x) == Catch::Approx(1.0).margin(1e-8));
  }
  // Off the knots the adjusted prior deviates by up to ~0.2 in the outermost
  // gaps and a few percent centrally (see the bernstein suite); the envelope
  // below is the oracle-measured truth for order 20.
  bezgp::Rng xr(5);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x(1);
    x << xr.uniform01();
    const double var = bezgp::forward_var(b, x);
    REQUIRE(var >= 0.79);
    REQUIRE(var <= 1.03);
  }
}

TEST_CASE("forward variance matches brute-force enumeration with random v") {
  const bezgp::Buttress b = random_buttress({2, 2}, 23);
  const bezgp::DenseControlPoints dense = bezgp::materialize(b);
  bezgp::Rng xr(24);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(2);
    x << xr.uniform01(), xr.uniform01();
    const double fast = bezgp::forward_var(b, x);
    const double brute = bezgp::brute_var(dense, x);
    REQUIRE(std::abs(fast - brute) <= 1e-10 * std::max(std::abs(brute), 1e-9));
    REQUIRE(fast > 0.0);
  }
}

TEST_CASE("KL is exactly zero at the prior") {
  std::vector<int> perm{0, 1};
  bezgp::Rng rng(6);
  bezgp::Buttress b = bezgp::make_buttress(perm, {2, 3}, bezgp::make_prior_scale({2, 3}, 1), rng);
  for (auto& w : b.w) w.setZero();
  REQUIRE(bezgp::kl(b) == 0.0);
}

TEST_CASE("KL with zero log variance weights reduces to the mean term") {
  // exp(0) matrices of ones multiply to tau, so S1 - tau and S3 vanish and
  // only the squared-mean term S2 remains.
  bezgp::Buttress b = random_buttress({1, 2}, 31, 1.0, 0.0);
  for (auto& v : b.v) v.setZero();
  Eigen::RowVectorXd m = Eigen::RowVectorXd::Ones(1);
  for (std::size_t g = 0; g < b.w.size(); ++g) {
    Eigen::MatrixXd sq = b.w[g].array().square().matrix();
    for (Eigen::Index j = 0; j < sq.cols(); ++j) sq.col(j) /= b.scale[g](j);
    m = m * sq;
  }
  REQUIRE(bezgp::kl(b) == Catch::Approx(m.sum()).epsilon(1e-12));
}

TEST_CASE("KL matches the explicit control-point sum") {
  for (std::uint64_t seed : {41u, 42u, 43u, 44u, 45u}) {
    const bezgp::Buttress b = random_buttress({1, 2}, seed);
    const double fast = bezgp::kl(b);
    const double brute = bezgp::brute_kl(bezgp::materialize(b), b.scale);
    REQUIRE(std::abs(fast - brute) <= 1e-8);
    REQUIRE(fast >= -1e-9);
  }
}

TEST_CASE("prior KL and variance are permutation neutral") {
  const std::vector<int> orders{1, 2, 3};
  const bezgp::PriorScale ps = bezgp::make_prior_scale(orders, 1);
  std::vector<std::vector<int>> perms{{0, 1, 2}, {2, 1, 0}, {1, 2, 0}};
  bezgp::Rng xr(51);
  Eigen::VectorXd x(3);
  x << xr.uniform01(), xr.uniform01(), xr.uniform01();
  std::vector<double> kls, vars;
  for (const auto& perm : perms) {
    bezgp::Rng rng(52);
    bezgp::Buttress b = bezgp::make_buttress(perm, orders, ps, rng);
    for (auto& w : b.w) w.setZero();
    kls.push_back(bezgp::kl(b));
    vars.push_back(bezgp::forward_var(b, x));
  }
  for (std::size_t i = 1; i < perms.size(); ++i) {
    REQUIRE(std::abs(kls[i] - kls[0]) <= 1e-10);
    REQUIRE(std::abs(vars[i] - vars[0]) <= 1e-10);
  }
}

TEST_CASE("path products reproduce the chain passes on a tau<=200 instance") {
  const bezgp::Buttress b = random_buttress({3, 2, 3}, 61);  // tau = 48
  const bezgp::DenseControlPoints dense = bezgp::materialize(b);
  double theta_sum = 0.0;
  for (double th : dense.theta) theta_sum += th;
  REQUIRE(std::abs(theta_sum - bezgp::sum_all_means(b)) <=
          1e-10 * std::max(std::abs(theta_sum), 1e-9));
}

TEST_CASE("zero sensitivities and zero KL weight give zero gradients") {
  const bezgp::Buttress b = random_buttress({2, 2}, 71);
  Eigen::MatrixXd X(3, 2);
  X << 0.1, 0.2, 0.5, 0.6, 0.9, 0.3;
  std::vector<bezgp::PointSensitivity> sens(3);
  const bezgp::ButtressGradients g = bezgp::backward(b, X, sens, 0.0);
  for (const auto& gw : g.gw) REQUIRE(gw.isZero(0.0));
  for (const auto& gv : g.gv) REQUIRE(gv.isZero(0.0));
}

TEST_CASE("one-dimensional mean gradient is the basis vector") {
  const bezgp::Buttress b = random_buttress({3}, 72);
  Eigen::MatrixXd X(1, 1);
  X << 0.35;
  std::vector<bezgp::PointSensitivity> sens(1);
  sens[0].dmean = 1.0;
  const bezgp::ButtressGradients g = bezgp::backward(b, X, sens, 0.0);
  const Eigen::VectorXd basis = bezgp::eval_basis(3, 0.35);
  for (int j = 0; j <= 3; ++j)
    REQUIRE(g.gw[0](0, j) == Catch::Approx(basis(j)).margin(1e-14));
}

TEST_CASE("backward matches finite differences at random entries") {
  const std::vector<int> orders{2, 3};
  bezgp::Buttress b = random_buttress(orders, 73, 0.8, 0.8);
  bezgp::Rng rng(74);
  const int bsz = 4;
  Eigen::MatrixXd X(bsz, 2);
  std::vector<bezgp::PointSensitivity> sens(bsz);
  for (int j = 0; j < bsz; ++j) {
    X(j, 0) = rng.uniform01();
    X(j, 1) = rng.uniform01();
    sens[j].dmean = rng.uniform(-2.0, 2.0);
    sens[j].dvar = rng.uniform(-2.0, 2.0);
  }
  const double klw = 0.7;

  auto objective = [&](const bezgp::Buttress& bb) {
    double total = klw * bezgp::kl(bb);
    for (int j = 0; j < bsz; ++j) {
      const Eigen::VectorXd x = X.row(j).transpose();
      total += sens[j].dmean * bezgp::forward_mean(bb, x) +
               sens[j].dvar * bezgp::forward_var(bb, x);
    }
    return total;
  };

  const bezgp::ButtressGradients g = bezgp::backward(b, X, sens, klw);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int layer = rng.below(2);
    const bool is_v = rng.below(2) == 1;
    Eigen::MatrixXd& mat = is_v ? b.v[layer] : b.w[layer];
    const Eigen::Index i = rng.below(static_cast<int>(mat.rows()));
    const Eigen::Index j = rng.below(static_cast<int>(mat.cols()));
    const double saved = mat(i, j);
    mat(i, j) = saved + h;
    const double hi = objective(b);
    mat(i, j) = saved - h;
    const double lo = objective(b);
    mat(i, j) = saved;
    const double fd = (hi - lo) / (2 * h);
    const double an = is_v ? g.gv[layer](i, j) : g.gw[layer](i, j);
    const double diff = std::abs(fd - an);
    REQUIRE((diff <= 1e-7 || diff <= 1e-4 * std::max(std::abs(fd), std::abs(an))));
  }
}

TEST_CASE("materialized variance weights stay positive") {
  const bezgp::Buttress b = random_buttress({2, 3}, 81, 1.0, 2.0);
  bezgp::Rng xr(82);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd x(2);
    x << xr.uniform01(), xr.uniform01();
    REQUIRE(bezgp::forward_var(b, x) > 0.0);
  }
}

TEST_CASE("log variance clamp is counted, not silent") {
  bezgp::Buttress b = random_buttress({2}, 91);
  b.v[0].setConstant(40.0);  // beyond the +-30 guard
  b.clamp_events = 0;
  Eigen::VectorXd x(1);
  x << 0.4;
  (void)bezgp::forward_var(b, x);
  REQUIRE(b.clamp_events > 0);
}

TEST_CASE("mean weight initialization keeps control-point means near zero") {
  for (int d : {1, 2, 3}) {
    std::vector<int> orders(d, 2);
    std::vector<int> perm(d);
    for (int i = 0; i < d; ++i) perm[i] = i;
    bezgp::Rng rng(100 + d);
    const bezgp::Buttress b =
        bezgp::make_buttress(perm, orders, bezgp::make_prior_scale(orders, 1), rng);
    const bezgp::DenseControlPoints dense = bezgp::materialize(b);
    for (double th : dense.theta) REQUIRE(std::abs(th) <= 0.1 + 1e-12);
    for (const auto& v : b.v) REQUIRE(v.isZero(0.0));
  }
}
