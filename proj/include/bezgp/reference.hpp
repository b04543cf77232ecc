#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "bezgp/bernstein.hpp"
#include "bezgp/buttress.hpp"
#include "bezgp/errors.hpp"

namespace bezgp {

// Explicit tables of every control point's mean and variance, obtained by
// enumerating all source-to-sink paths. Exponential in d; guarded, and meant
// purely as an independent oracle for the chain passes.
struct DenseControlPoints {
  std::vector<int> perm;          // layer -> original dimension, copied from the source
  std::vector<int> layer_orders;  // per-layer orders
  std::vector<double> theta;      // means, layer-major (last layer fastest)
  std::vector<double> sigma;      // variances, same layout
};

inline constexpr double kMaxDenseControlPoints = 1e6;

namespace detail {

// Walk all multi-indices in layer-major order, invoking fn(index_vector).
template <typename Fn>
void for_each_multi_index(const std::vector<int>& layer_orders, Fn&& fn) {
  const int d = static_cast<int>(layer_orders.size());
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  while (true) {
    fn(idx);
    int g = d - 1;
    while (g >= 0) {
      if (++idx[static_cast<std::size_t>(g)] <= layer_orders[static_cast<std::size_t>(g)]) break;
      idx[static_cast<std::size_t>(g)] = 0;
      --g;
    }
    if (g < 0) break;
  }
}

}  // namespace detail

inline DenseControlPoints materialize(const Buttress& b) {
  if (!(b.tau <= kMaxDenseControlPoints))
    throw TooLarge("refusing to materialize more than 1e6 control points");
  const int d = b.depth();
  std::vector<Eigen::MatrixXd> u(static_cast<std::size_t>(d));
  for (int g = 0; g < d; ++g) u[static_cast<std::size_t>(g)] = detail::var_weight(b, g);

  DenseControlPoints dense;
  dense.perm = b.perm;
  dense.layer_orders = b.layer_orders;
  dense.theta.reserve(static_cast<std::size_t>(b.tau));
  dense.sigma.reserve(static_cast<std::size_t>(b.tau));
  detail::for_each_multi_index(b.layer_orders, [&](const std::vector<int>& idx) {
    double th = 1.0, sg = 1.0;
    int row = 0;
    for (int g = 0; g < d; ++g) {
      const int col = idx[static_cast<std::size_t>(g)];
      th *= b.w[static_cast<std::size_t>(g)](row, col);
      sg *= u[static_cast<std::size_t>(g)](row, col);
      row = col;
    }
    dense.theta.push_back(th);
    dense.sigma.push_back(sg);
  });
  return dense;
}

namespace detail {

// Bernstein weights of every layer for one point, optionally squared.
inline std::vector<Eigen::VectorXd> layer_bases(const DenseControlPoints& dense,
                                                const Eigen::VectorXd& x, bool squared) {
  const int d = static_cast<int>(dense.layer_orders.size());
  std::vector<Eigen::VectorXd> bs(static_cast<std::size_t>(d));
  for (int g = 0; g < d; ++g) {
    const double t = x(dense.perm[static_cast<std::size_t>(g)]);
    bs[static_cast<std::size_t>(g)] =
        squared ? eval_basis_squared(dense.layer_orders[static_cast<std::size_t>(g)], t)
                : eval_basis(dense.layer_orders[static_cast<std::size_t>(g)], t);
  }
  return bs;
}

}  // namespace detail

// Direct nested-sum posterior mean: sum over all control points of
// theta times the product of per-dimension Bernstein weights.
inline double brute_mean(const DenseControlPoints& dense, const Eigen::VectorXd& x) {
  const auto bs = detail::layer_bases(dense, x, /*squared=*/false);
  double total = 0.0;
  std::size_t flat = 0;
  detail::for_each_multi_index(dense.layer_orders, [&](const std::vector<int>& idx) {
    double wgt = 1.0;
    for (std::size_t g = 0; g < idx.size(); ++g)
      wgt *= bs[g](idx[g]);
    total += dense.theta[flat++] * wgt;
  });
  return total;
}

// Direct nested-sum posterior variance: squared Bernstein weights against the
// control-point variances.
inline double brute_var(const DenseControlPoints& dense, const Eigen::VectorXd& x) {
  const auto bs = detail::layer_bases(dense, x, /*squared=*/true);
  double total = 0.0;
  std::size_t flat = 0;
  detail::for_each_multi_index(dense.layer_orders, [&](const std::vector<int>& idx) {
    double wgt = 1.0;
    for (std::size_t g = 0; g < idx.size(); ++g)
      wgt *= bs[g](idx[g]);
    total += dense.sigma[flat++] * wgt;
  });
  return total;
}

// Explicit per-control-point KL sum (doubled convention, matching
// bezgp::kl): for each control point with posterior (theta, sigma_hat) and
// prior variance sigma = prod of per-layer scales,
//   sigma_hat/sigma - 1 + theta^2/sigma + log(sigma/sigma_hat).
// `layer_scales` must be the buttress's own (ensemble-scaled, permuted)
// per-layer scale vectors.
inline double brute_kl(const DenseControlPoints& dense,
                       const std::vector<Eigen::VectorXd>& layer_scales) {
  if (layer_scales.size() != dense.layer_orders.size())
    throw ShapeMismatch("scale layer count does not match dense table");
  double total = 0.0;
  std::size_t flat = 0;
  detail::for_each_multi_index(dense.layer_orders, [&](const std::vector<int>& idx) {
    double prior = 1.0;
    for (std::size_t g = 0; g < idx.size(); ++g) prior *= layer_scales[g](idx[g]);
    const double post = dense.sigma[flat];
    const double mean = dense.theta[flat];
    total += post / prior - 1.0 + mean * mean / prior + std::log(prior / post);
    ++flat;
  });
  return total;
}

// Prior covariance between two points: the separable kernel
//   k(x, z) = prod_g sum_j B_j(x_g) B_j(z_g) scale_g(j).
// The ensemble size cancels (r members, each with prior variance scaled by
// r^(-1/d) per layer), which the explicit r-fold sum below makes visible.
inline double prior_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                           const std::vector<int>& orders, int r) {
  const PriorScale ps = make_prior_scale(orders, r);
  double one_member = 1.0;
  for (std::size_t g = 0; g < orders.size(); ++g) {
    const Eigen::VectorXd bx = eval_basis(orders[g], x(static_cast<Eigen::Index>(g)));
    const Eigen::VectorXd bz = eval_basis(orders[g], z(static_cast<Eigen::Index>(g)));
    one_member *=
        (bx.cwiseProduct(bz).cwiseProduct(ps.per_dim[g] * ps.ensemble_factor)).sum();
  }
  return static_cast<double>(r) * one_member;
}

// Exact log marginal likelihood log N(y; 0, K + noise_var I) under the prior
// kernel above, by dense Cholesky factorization. The variational objective of
// any trained model on the same data can never exceed this value.
inline double exact_log_evidence(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const std::vector<int>& orders, double noise_var, int r) {
  const Eigen::Index n = X.rows();
  if (n < 1) throw EmptyData("exact log evidence needs at least one observation");
  if (n > 500) throw TooLarge("exact log evidence is limited to 500 observations");
  if (y.size() != n) throw LengthMismatch("target length does not match row count");

  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double kij =
          prior_kernel(X.row(i).transpose(), X.row(j).transpose(), orders, r);
      K(i, j) = kij;
      K(j, i) = kij;
    }
  }
  K.diagonal().array() += noise_var;

  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) {
    K.diagonal().array() += 1e-10;  // one jitter attempt before giving up
    llt.compute(K);
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite("prior covariance is not positive definite even with jitter");
  }
  const Eigen::VectorXd alpha = llt.solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n2pi = static_cast<double>(n) * std::log(2.0 * M_PI);
  return -0.5 * (y.dot(alpha) + logdet + n2pi);
}

}  // namespace bezgp
