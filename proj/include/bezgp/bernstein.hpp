#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "bezgp/errors.hpp"

namespace bezgp {

// Raw basis evaluation is allowed up to this order (diagnostics, plotting).
inline constexpr int kMaxBasisOrder = 64;
// The inverse-squared-Bernstein variance adjustment is valid only up to here;
// beyond it the defining linear system has nonpositive solutions.
inline constexpr int kMaxAdjustOrder = 25;

// All nu+1 Bernstein polynomials of order nu at t: entry i is
// C(nu,i) t^i (1-t)^(nu-i). They are nonnegative on [0,1] and sum to 1.
// Evaluation outside [0,1] is well-defined polynomially but only permitted
// when the caller opts in explicitly; scaling policy lives upstream.
inline Eigen::VectorXd eval_basis(int nu, double t, bool allow_outside = false) {
  if (nu < 1 || nu > kMaxBasisOrder) throw OrderOutOfRange(nu, kMaxBasisOrder);
  if (!allow_outside && (t < 0.0 || t > 1.0))
    throw InvalidArgument("basis evaluation at t=" + std::to_string(t) +
                          " outside [0,1] without explicit opt-in");
  const int n = nu + 1;
  Eigen::VectorXd b(n);
  // Running powers of t and 1-t, and binomial coefficients by the
  // multiplicative recurrence C(nu,i+1) = C(nu,i)*(nu-i)/(i+1). The
  // coefficients are integers < 2^53 for nu <= 25, hence exact.
  std::vector<double> tp(static_cast<std::size_t>(n)), sp(static_cast<std::size_t>(n));
  const double s = 1.0 - t;
  tp[0] = 1.0;
  sp[0] = 1.0;
  for (int i = 1; i < n; ++i) {
    tp[static_cast<std::size_t>(i)] = tp[static_cast<std::size_t>(i - 1)] * t;
    sp[static_cast<std::size_t>(i)] = sp[static_cast<std::size_t>(i - 1)] * s;
  }
  double coef = 1.0;
  for (int i = 0; i < n; ++i) {
    b[i] = coef * tp[static_cast<std::size_t>(i)] * sp[static_cast<std::size_t>(nu - i)];
    coef = coef * static_cast<double>(nu - i) / static_cast<double>(i + 1);
  }
  return b;
}

// Element-wise square of eval_basis; the diagonal weights of variance passes.
inline Eigen::VectorXd eval_basis_squared(int nu, double t, bool allow_outside = false) {
  Eigen::VectorXd b = eval_basis(nu, t, allow_outside);
  return b.array().square().matrix();
}

// Per-dimension variance adjustment: solve A s = 1 with
// A[i][j] = (B_j(i/nu))^2 so that the prior variance is exactly 1 at every
// knot i/nu. Unique, strictly positive for nu <= 25; order 26 is the first
// with negative entries, so larger orders are rejected.
inline Eigen::VectorXd solve_prior_scale(int nu) {
  if (nu < 1) throw OrderOutOfRange(nu, kMaxAdjustOrder);
  if (nu > kMaxAdjustOrder) throw NonPositiveScale(nu);
  const int n = nu + 1;
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    A.row(i) = eval_basis_squared(nu, static_cast<double>(i) / static_cast<double>(nu))
                   .transpose();
  // Gaussian elimination with partial pivoting; the system is at most 26x26.
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  if (lu.matrixLU().diagonal().cwiseAbs().minCoeff() < 1e-12)
    throw SingularSystem("prior scale system for order " + std::to_string(nu) +
                         " has a pivot below 1e-12");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd scale = lu.solve(ones);
  const double residual = (A * scale - ones).lpNorm<Eigen::Infinity>();
  if (residual > 1e-8)
    throw SingularSystem("prior scale solve for order " + std::to_string(nu) +
                         " left residual " + std::to_string(residual));
  if (scale.minCoeff() <= 0.0) throw NonPositiveScale(nu, scale.minCoeff());
  return scale;
}

// Per-dimension adjustments plus the ensemble factor r^(-1/d). Each of the r
// ensemble members carries prior variance scaled by this factor on every
// layer, so the member variances are 1/r each and the ensemble sum keeps unit
// prior variance.
struct PriorScale {
  std::vector<Eigen::VectorXd> per_dim;  // indexed by original dimension
  double ensemble_factor = 1.0;
};

inline PriorScale make_prior_scale(const std::vector<int>& orders, int r) {
  if (orders.empty()) throw InvalidArgument("at least one input dimension required");
  if (r < 1) throw InvalidArgument("ensemble size must be >= 1");
  PriorScale ps;
  ps.per_dim.reserve(orders.size());
  for (int nu : orders) ps.per_dim.push_back(solve_prior_scale(nu));
  ps.ensemble_factor =
      std::pow(static_cast<double>(r), -1.0 / static_cast<double>(orders.size()));
  return ps;
}

}  // namespace bezgp
