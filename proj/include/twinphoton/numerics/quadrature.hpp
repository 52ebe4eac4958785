#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>

#include "twinphoton/error.hpp"

namespace twinphoton {

struct Domain {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
};

/// Adaptive quadrature over a finite interval or [a, inf).
/// Throws AccuracyError when the error estimate exceeds rel_tol * |value|
/// (with an absolute floor so that an identically zero integrand succeeds).
inline QuadratureResult integrate(const std::function<double(double)>& f, Domain domain,
                                  double rel_tol = 1e-10) {
  if (!(rel_tol > 0.0)) throw InvalidParameter("rel_tol must be positive");
  if (!(domain.lower <= domain.upper)) throw InvalidParameter("empty integration domain");
  QuadratureResult out;
  if (std::isinf(domain.upper)) {
    boost::math::quadrature::exp_sinh<double> integrator;
    double l1 = 0.0;
    out.value = integrator.integrate([&](double t) { return f(t); }, domain.lower,
                                     domain.upper, std::min(rel_tol, 1e-6) * 1e-3,
                                     &out.error_estimate, &l1);
  } else {
    out.value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double t) { return f(t); }, domain.lower, domain.upper, 20,
        std::min(rel_tol, 1e-6) * 1e-3, &out.error_estimate);
  }
  const double floor = 1e-300;
  if (!std::isfinite(out.value) || out.error_estimate > rel_tol * std::fabs(out.value) + floor) {
    throw AccuracyError("quadrature did not reach the requested tolerance");
  }
  return out;
}

}  // namespace twinphoton
