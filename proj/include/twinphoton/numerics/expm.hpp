#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "twinphoton/error.hpp"

namespace twinphoton {

/// exp(A) by scaling and squaring with a diagonal [6/6] Pade approximant.
///
/// A is scaled by 2^-s until its infinity norm is at most 1/2, where the
/// [6/6] truncation error is below double precision, then squared back.
template <int N>
Eigen::Matrix<double, N, N> matrix_exponential(const Eigen::Matrix<double, N, N>& a) {
  using Mat = Eigen::Matrix<double, N, N>;
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat x = a * std::ldexp(1.0, -squarings);

  // [6/6] Pade coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
  constexpr double c[7] = {1.0,
                           1.0 / 2.0,
                           5.0 / 44.0,
                           1.0 / 66.0,
                           1.0 / 792.0,
                           1.0 / 15840.0,
                           1.0 / 665280.0};
  const Mat id = Mat::Identity(a.rows(), a.cols());
  const Mat x2 = x * x;
  const Mat x4 = x2 * x2;
  const Mat x6 = x4 * x2;
  const Mat even = c[0] * id + c[2] * x2 + c[4] * x4 + c[6] * x6;
  const Mat odd = x * (c[1] * id + c[3] * x2 + c[5] * x4);
  Mat result = (even - odd).partialPivLu().solve(even + odd);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// Throws unless every column of `generator` sums to zero (probability-conserving).
template <int N>
void require_conserving_generator(const Eigen::Matrix<double, N, N>& generator) {
  const double scale = std::max(1.0, generator.cwiseAbs().maxCoeff());
  for (int j = 0; j < generator.cols(); ++j) {
    if (!std::isfinite(generator.col(j).sum()) ||
        std::fabs(generator.col(j).sum()) > 1e-12 * scale) {
      throw InvalidParameter("generator column " + std::to_string(j) +
                             " does not sum to zero");
    }
  }
}

/// exp(generator * tau) * init for a probability-conserving rate generator.
/// Column sums of zero make the output total equal the input total.
template <int N>
Eigen::Matrix<double, N, 1> matrix_exponential_action(const Eigen::Matrix<double, N, N>& generator,
                                                      const Eigen::Matrix<double, N, 1>& init,
                                                      double tau) {
  require_conserving_generator(generator);
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidParameter("tau must be finite and >= 0");
  if (tau == 0.0) return init;
  return matrix_exponential<N>(generator * tau) * init;
}

}  // namespace twinphoton
