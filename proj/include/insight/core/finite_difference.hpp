#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

enum class Stencil {
  /// (f(x+h) − f(x−h)) / 2h
  ThreePoint,
  /// (−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h; fourth-order
  /// truncation, for losses with large higher derivatives.
  FivePoint,
};

/// Central-difference gradient of a scalar function at `theta`.
template <typename F>
Tensor<double> finite_difference_grad(F&& f, const Tensor<double>& theta, double eps,
                                      Stencil stencil = Stencil::ThreePoint) {
  if (!(eps > 0)) throw ContractError("finite difference step must be positive");
  Tensor<double> grad(theta.shape());
  Tensor<double> probe = theta;
  const auto at = [&](std::size_t i, double h) {
    probe[i] = theta[i] + h;
    const double v = f(static_cast<const Tensor<double>&>(probe));
    probe[i] = theta[i];
    if (!std::isfinite(v)) {
      throw NumericError("finite-difference oracle hit a non-finite value at index " + std::to_string(i));
    }
    return v;
  };
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (stencil == Stencil::ThreePoint) {
      grad[i] = (at(i, eps) - at(i, -eps)) / (2 * eps);
    } else {
      grad[i] = (-at(i, 2 * eps) + 8 * at(i, eps) - 8 * at(i, -eps) + at(i, -2 * eps)) / (12 * eps);
    }
  }
  return grad;
}

/// Entries smaller than this are compared on an absolute scale.
inline constexpr double kGradCheckFloor = 1e-4;

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, kGradCheckFloor)
inline double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  require_shape(numeric.shape(), analytic.shape(), "gradient comparison");
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace insight
