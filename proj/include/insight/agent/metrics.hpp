#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"
#include "insight/dataset/dataset.hpp"

namespace insight {

/// Per-image coordinates of C objects, y then x, as used by F-MAE.
struct ImageCoords {
  std::size_t n = 0, objects = 0;
  std::vector<double> pred, truth;  // [N×2C]
  std::vector<std::uint8_t> exist;  // [N×C]
};

/// Current-frame slice of [N×2CK] stacked coordinates.
template <typename S>
ImageCoords current_frame(const Tensor<S>& pred, const Tensor<S>& truth, const std::vector<std::uint8_t>& exist,
                          std::size_t objects, std::size_t frames) {
  require_shape(pred.shape(), truth.shape(), "F-MAE coordinates");
  const std::size_t L = objects * frames;
  if (pred.rank() != 2 || pred.dim(1) != 2 * L || exist.size() != pred.dim(0) * L) {
    throw DimensionError("current_frame: expected [N×2CK] coordinates and N*C*K flags");
  }
  ImageCoords out;
  out.n = pred.dim(0);
  out.objects = objects;
  for (std::size_t i = 0; i < out.n; ++i)
    for (std::size_t j = 0; j < objects; ++j) {
      for (std::size_t a = 0; a < 2; ++a) {
        const std::size_t k = i * 2 * L + coord_index(j, frames - 1, a, frames);
        out.pred.push_back(static_cast<double>(pred[k]));
        out.truth.push_back(static_cast<double>(truth[k]));
      }
      out.exist.push_back(exist[i * L + exist_index(j, frames - 1, frames)]);
    }
  return out;
}

enum class FmaeNormalization {
  /// 1/(2·E·N·|S|), as printed.
  Verbatim,
  /// 1/(2·E·|S|), dropping the second sample count.
  PerFrame,
};

/// F-MAE over objects flagged in `relevant` (size C):
///   scale · Σ_i Σ_j s_ij c_ij (|Δy_ij| + |Δx_ij|),
/// with E = Σ_ij s_ij c_ij. Accumulated per object column.
inline double f_mae(const ImageCoords& d, const std::vector<bool>& relevant,
                    FmaeNormalization norm = FmaeNormalization::Verbatim) {
  if (relevant.size() != d.objects) throw DimensionError("F-MAE relevance flags do not match the object count");
  if (d.pred.size() != 2 * d.n * d.objects || d.truth.size() != d.pred.size() || d.exist.size() != d.n * d.objects) {
    throw DimensionError("F-MAE inputs are inconsistent");
  }
  std::size_t s_count = 0;
  for (bool r : relevant) s_count += r;
  if (s_count == 0) throw UndefinedMetricError("F-MAE with an empty relevant-object set");
  std::vector<double> column(d.objects, 0.0);
  std::vector<std::size_t> present(d.objects, 0);
  for (std::size_t i = 0; i < d.n; ++i) {
    const double* p = d.pred.data() + i * 2 * d.objects;
    const double* t = d.truth.data() + i * 2 * d.objects;
    const std::uint8_t* c = d.exist.data() + i * d.objects;
    for (std::size_t j = 0; j < d.objects; ++j) {
      if (!c[j]) continue;
      column[j] += std::abs(t[2 * j] - p[2 * j]) + std::abs(t[2 * j + 1] - p[2 * j + 1]);
      ++present[j];
    }
  }
  double total = 0;
  std::size_t e = 0;
  for (std::size_t j = 0; j < d.objects; ++j)
    if (relevant[j]) total += column[j], e += present[j];
  if (e == 0) throw UndefinedMetricError("F-MAE: no relevant object is present in any sample (E = 0)");
  double denom = 2.0 * static_cast<double>(e) * static_cast<double>(s_count);
  if (norm == FmaeNormalization::Verbatim) denom *= static_cast<double>(d.n);
  return total / denom;
}

/// Objects with at least one variable in `used` (indices into the
/// coordinate layout (j·K+f)·2+axis).
inline std::vector<bool> relevant_objects(const std::vector<std::size_t>& used, std::size_t objects, std::size_t frames) {
  std::vector<bool> out(objects, false);
  for (std::size_t v : used) {
    const std::size_t j = v / (2 * frames);
    if (j >= objects) throw DimensionError("variable index outside the coordinate layout");
    out[j] = true;
  }
  return out;
}

}  // namespace insight
