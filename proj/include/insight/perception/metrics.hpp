#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

/// Mean over samples of (sum of |pred - truth| over present objects' coordinates) / (C*K*2).
/// pred/truth are [N×2CK], exist is N*C*K flags in (object, frame) order.
template <typename S>
double coordinate_mae(const Tensor<S>& pred, const Tensor<S>& truth, const std::vector<std::uint8_t>& exist) {
  require_shape(pred.shape(), truth.shape(), "MAE prediction");
  if (pred.rank() != 2 || exist.size() * 2 != pred.size()) throw DimensionError("MAE expects [N×2CK] coordinates");
  const std::size_t n = pred.dim(0), d = pred.dim(1);
  if (n == 0) throw UndefinedMetricError("MAE of an empty batch");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double err = 0;
    for (std::size_t k = 0; k < d; ++k)
      if (exist[(i * d + k) / 2]) err += std::abs(static_cast<double>(pred[i * d + k]) - static_cast<double>(truth[i * d + k]));
    total += err / static_cast<double>(d);
  }
  return total / static_cast<double>(n);
}

/// Fraction of existence labels matched by thresholding p at 0.5.
template <typename S>
double existence_accuracy(const Tensor<S>& prob, const std::vector<std::uint8_t>& labels) {
  if (prob.size() != labels.size() || labels.empty()) throw DimensionError("existence accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += (prob[i] >= S(0.5)) == (labels[i] != 0);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace insight
