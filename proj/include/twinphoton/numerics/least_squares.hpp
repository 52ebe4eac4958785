#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "twinphoton/error.hpp"

namespace twinphoton {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct FitProblem {
  std::function<Vector(const Vector&)> residual;
  /// Optional analytic Jacobian; central differences are used when empty.
  std::function<Matrix(const Vector&)> jacobian;
  Vector initial;
  /// Box bounds; leave empty for an unbounded problem.
  Vector lower;
  Vector upper;
  /// Optional per-residual weights (residual_i is multiplied by weights_i).
  Vector weights;
  int max_iterations = 200;
  double tolerance = 1e-10;
};

struct FitResult {
  Vector params;
  /// (J^T J)^-1 at the solution, unscaled. Multiply by chi2/dof when the
  /// residuals are not already normalized by their standard deviations.
  Matrix covariance;
  double residual_norm = 0.0;
  int iterations = 0;
};

/// Central-difference Jacobian of f at x.
inline Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f,
                                         const Vector& x) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(std::fabs(x[j]), 1e-3);
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

namespace detail {

inline void validate(const FitProblem& p) {
  if (!p.residual) throw InvalidParameter("fit problem has no residual function");
  if (!(p.tolerance > 0.0)) throw InvalidParameter("fit tolerance must be positive");
  if (p.max_iterations < 0) throw InvalidParameter("max_iterations must be >= 0");
  const auto n = p.initial.size();
  if ((p.lower.size() != 0 && p.lower.size() != n) || (p.upper.size() != 0 && p.upper.size() != n)) {
    throw InvalidParameter("bounds size does not match parameter count");
  }
  if (p.lower.size() && p.upper.size() && (p.lower.array() > p.upper.array()).any()) {
    throw InvalidParameter("lower bound above upper bound");
  }
}

inline Vector project(const FitProblem& p, Vector x) {
  if (p.lower.size()) x = x.cwiseMax(p.lower);
  if (p.upper.size()) x = x.cwiseMin(p.upper);
  return x;
}

}  // namespace detail

/// Damped Gauss-Newton (Levenberg-Marquardt) with box bounds enforced by projection.
inline FitResult least_squares(const FitProblem& problem) {
  detail::validate(problem);

  auto residual = [&](const Vector& x) {
    Vector r = problem.residual(x);
    if (problem.weights.size()) {
      if (problem.weights.size() != r.size()) throw InvalidParameter("weights size mismatch");
      r = r.cwiseProduct(problem.weights);
    }
    return r;
  };
  auto jacobian = [&](const Vector& x) {
    Matrix j = problem.jacobian ? problem.jacobian(x)
                                : finite_difference_jacobian(problem.residual, x);
    if (problem.weights.size()) j = problem.weights.asDiagonal() * j;
    return j;
  };

  Vector x = detail::project(problem, problem.initial);
  Vector r = residual(x);
  if (!r.allFinite()) throw InvalidParameter("residual is not finite at the initial parameters");
  double cost = r.squaredNorm();
  Matrix jac = jacobian(x);
  const double tol = problem.tolerance;

  double lambda = -1.0;
  int iter = 0;
  bool converged = false;
  for (;;) {
    const Matrix jtj = jac.transpose() * jac;
    const Vector grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() <= tol * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    if (iter >= problem.max_iterations) break;
    ++iter;
    if (lambda < 0.0) lambda = 1e-10;  // start close to Gauss-Newton; damping grows on rejection

    bool accepted = false;
    bool small_step = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      Matrix damped = jtj;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) {
        damped(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      }
      const Vector step = damped.ldlt().solve(-grad);
      const Vector candidate = detail::project(problem, x + step);
      const Vector delta = candidate - x;
      if (delta.norm() <= tol * (x.norm() + tol)) {
        small_step = true;
        break;
      }
      const Vector r_new = residual(candidate);
      const double cost_new = r_new.allFinite() ? r_new.squaredNorm()
                                                : std::numeric_limits<double>::infinity();
      if (cost_new < cost) {
        const double reduction = (cost - cost_new) / std::max(cost, 1e-300);
        x = candidate;
        r = r_new;
        cost = cost_new;
        jac = jacobian(x);
        lambda = std::max(lambda / 3.0, 1e-15);
        accepted = true;
        if (reduction <= tol || delta.norm() <= tol * (x.norm() + tol)) {
          converged = true;
        }
      } else {
        lambda *= 4.0;
      }
    }
    if (small_step) {
      converged = true;
      break;
    }
    if (converged) break;
    if (!accepted) break;
  }

  if (!converged) {
    std::ostringstream msg;
    msg << "least squares did not converge after " << iter
        << " iterations (residual norm " << std::sqrt(cost) << ")";
    throw FitFailure(msg.str(), std::sqrt(cost), iter);
  }

  FitResult out;
  out.params = x;
  out.residual_norm = std::sqrt(cost);
  out.iterations = iter;
  out.covariance = (jac.transpose() * jac).completeOrthogonalDecomposition().pseudoInverse();
  return out;
}

}  // namespace twinphoton
