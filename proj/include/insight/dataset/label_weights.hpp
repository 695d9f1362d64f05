#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

/// Distribution-balanced weights for the multi-label existence loss.
///
/// With c_ij the presence of label j in sample i:
///   n_j    = 1 / sum_i c_ij
///   eta_ij = n_j / sum_j' c_ij' n_j'
///   w_ij   = alpha + sigmoid(beta * (eta_ij - mu)),  mu = mean_j n_j
///
/// Labels never present have no n_j; they are left out of mu and get
/// eta = 0. A sample with no present label also gets eta = 0 throughout.
struct LabelWeights {
  double alpha = 0.1;
  double beta = 10.0;
  double psi = 2.0;  // focal exponent, stored with the weights it pairs with
  double mu = 0.0;
  std::vector<double> n;  // 0 for labels never present

  std::size_t labels() const noexcept { return n.size(); }

  std::vector<double> eta(const std::uint8_t* present) const {
    double denom = 0;
    for (std::size_t j = 0; j < n.size(); ++j) denom += present[j] ? n[j] : 0.0;
    std::vector<double> e(n.size(), 0.0);
    if (denom > 0)
      for (std::size_t j = 0; j < n.size(); ++j) e[j] = n[j] / denom;
    return e;
  }

  /// w_i. for one sample's presence vector.
  std::vector<double> row(const std::uint8_t* present) const {
    auto e = eta(present);
    for (auto& v : e) v = alpha + 1.0 / (1.0 + std::exp(-beta * (v - mu)));
    return e;
  }

  std::vector<double> row(const std::vector<std::uint8_t>& present) const {
    if (present.size() != n.size()) throw DimensionError("label weight row: label count mismatch");
    return row(present.data());
  }
};

struct LabelWeightOptions {
  double alpha = 0.1;
  double beta = 10.0;
  double psi = 2.0;
};

/// Fits the weights to a samples × labels presence matrix (row-major).
inline LabelWeights label_weights(const std::vector<std::uint8_t>& presence, std::size_t samples, std::size_t labels,
                                  LabelWeightOptions opt = {}) {
  if (samples == 0 || labels == 0) throw DegenerateDataError("label weights need at least one sample and one label");
  if (presence.size() != samples * labels) throw DimensionError("presence matrix does not match samples × labels");
  LabelWeights w;
  w.alpha = opt.alpha;
  w.beta = opt.beta;
  w.psi = opt.psi;
  w.n.assign(labels, 0.0);
  std::vector<std::size_t> count(labels, 0);
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = 0; j < labels; ++j) count[j] += presence[i * labels + j] ? 1 : 0;
  std::size_t seen = 0;
  double total = 0;
  for (std::size_t j = 0; j < labels; ++j) {
    if (count[j] == 0) continue;
    w.n[j] = 1.0 / static_cast<double>(count[j]);
    total += w.n[j];
    ++seen;
  }
  if (seen == 0) throw DegenerateDataError("no label is ever present; existence weights are undefined");
  w.mu = total / static_cast<double>(seen);
  return w;
}

/// Weights for every sample of a presence matrix, samples × labels.
inline Tensor<double> weight_matrix(const LabelWeights& w, const std::vector<std::uint8_t>& presence,
                                    std::size_t samples) {
  Tensor<double> out(Shape{samples, w.labels()});
  for (std::size_t i = 0; i < samples; ++i) {
    const auto r = w.row(presence.data() + i * w.labels());
    std::copy(r.begin(), r.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * w.labels()));
  }
  return out;
}

}  // namespace insight
