#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "insight/core/ops.hpp"
#include "insight/dataset/dataset.hpp"
#include "insight/perception/model.hpp"

namespace insight {

inline constexpr double kProbFloor = 1e-6;

/// Distribution-balanced focal loss over existence probabilities p [N×L]:
///   -(1/N) sum_ij w_ij [c_ij (1-p)^psi ln p + (1-c_ij) p^psi ln(1-p)]
/// with p clamped to [1e-6, 1-1e-6]; the clamp passes no gradient.
template <typename S>
Var<S> loss_exist(const Var<S>& p, const std::vector<std::uint8_t>& labels, const Tensor<S>& weights, double psi = 2.0) {
  require_shape(weights.shape(), p.shape(), "existence weights");
  if (labels.size() != p.size()) throw DimensionError("existence labels do not match predictions");
  const std::size_t n = p.shape().empty() ? 1 : p.shape()[0];
  auto& tape = p.tape();
  const S lo = S(kProbFloor), hi = S(1 - kProbFloor);
  const auto& pv = p.value();
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), kProbFloor, 1 - kProbFloor);
    const double w = static_cast<double>(weights[i]);
    total += labels[i] ? w * std::pow(1 - q, psi) * std::log(q) : w * std::pow(q, psi) * std::log(1 - q);
    tape.note_kink(std::min(std::abs(pv[i] - lo), std::abs(pv[i] - hi)));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(-total / static_cast<double>(n)));
  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels);
  const std::size_t pi = p.id();
  return tape.record(std::move(out), {p}, [=](Tape<S>& t, std::size_t self) {
    const double g = static_cast<double>(t.grad_buffer(self)[0]) / static_cast<double>(n);
    const auto& pv = t.value(pi);
    auto& gp = t.grad_buffer(pi);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double q = static_cast<double>(pv[i]);
      if (q <= kProbFloor || q >= 1 - kProbFloor) continue;
      const double w = static_cast<double>(weights[i]);
      double d;
      if ((*lab)[i]) {
        d = -psi * std::pow(1 - q, psi - 1) * std::log(q) + std::pow(1 - q, psi) / q;
      } else {
        d = psi * std::pow(q, psi - 1) * std::log(1 - q) - std::pow(q, psi) / (1 - q);
      }
      gp[i] += static_cast<S>(-g * w * d);
    }
  });
}

/// (1/N) sum_i sum_k mask_ik |pred_ik - target_ik| for pred [N×D].
template <typename S>
Var<S> masked_l1(const Var<S>& pred, const Tensor<S>& target, const Tensor<S>& mask) {
  require_shape(target.shape(), pred.shape(), "L1 target");
  require_shape(mask.shape(), pred.shape(), "L1 mask");
  const std::size_t n = pred.shape().empty() ? 1 : pred.shape()[0];
  auto& tape = pred.tape();
  const auto& pv = pred.value();
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mask[i] == S(0)) continue;
    const S r = pv[i] - target[i];
    total += static_cast<double>(mask[i]) * std::abs(static_cast<double>(r));
    tape.note_kink(r);
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
  const std::size_t pi = pred.id();
  return tape.record(std::move(out), {pred}, [=](Tape<S>& t, std::size_t self) {
    const S g = t.grad_buffer(self)[0] / static_cast<S>(n);
    const auto& pv = t.value(pi);
    auto& gp = t.grad_buffer(pi);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const S r = pv[i] - target[i];
      if (mask[i] == S(0) || r == S(0)) continue;
      gp[i] += g * mask[i] * (r > S(0) ? S(1) : S(-1));
    }
  });
}

/// Supervision for a batch of samples, laid out like the perception heads.
template <typename S>
struct SymbolTargets {
  std::size_t n = 0;
  std::vector<std::uint8_t> exist;  // [N×CK]
  Tensor<S> exist_weights;          // [N×CK]
  Tensor<S> coords, coord_mask;     // [N×2CK]
  Tensor<S> sizes, size_mask;       // [N×2C]
};

/// Coordinate mask: both axes of every present (object, frame).
/// Size mask: both extents of objects present in the current frame.
template <typename S>
SymbolTargets<S> make_targets(const FrameSymbolDataset& d, const std::vector<std::size_t>& idx, const LabelWeights& w) {
  const std::size_t C = d.objects(), K = d.stack(), L = C * K;
  SymbolTargets<S> t;
  t.n = idx.size();
  t.exist.reserve(t.n * L);
  t.exist_weights = Tensor<S>(Shape{t.n, L});
  t.coords = Tensor<S>(Shape{t.n, 2 * L});
  t.coord_mask = Tensor<S>(Shape{t.n, 2 * L});
  t.sizes = Tensor<S>(Shape{t.n, 2 * C});
  t.size_mask = Tensor<S>(Shape{t.n, 2 * C});
  for (std::size_t r = 0; r < t.n; ++r) {
    const std::size_t i = idx[r];
    const auto e = d.exist_labels(i);
    const auto row = w.row(e);
    const auto c = d.coord_labels(i);
    const auto z = d.size_labels(i);
    t.exist.insert(t.exist.end(), e.begin(), e.end());
    for (std::size_t l = 0; l < L; ++l) {
      t.exist_weights[r * L + l] = static_cast<S>(row[l]);
      for (std::size_t a = 0; a < 2; ++a) {
        t.coords[r * 2 * L + 2 * l + a] = static_cast<S>(c[2 * l + a]);
        t.coord_mask[r * 2 * L + 2 * l + a] = e[l] ? S(1) : S(0);
      }
    }
    for (std::size_t j = 0; j < C; ++j) {
      const bool present = d.symbols[i].back().exist[j] != 0;
      for (std::size_t a = 0; a < 2; ++a) {
        t.sizes[r * 2 * C + 2 * j + a] = static_cast<S>(z[2 * j + a]);
        t.size_mask[r * 2 * C + 2 * j + a] = present ? S(1) : S(0);
      }
    }
  }
  return t;
}

template <typename S>
struct CnnLoss {
  Var<S> exist, coor, size, total;
};

/// L_cnn = L_exist + L_coor + L_size.
template <typename S>
CnnLoss<S> loss_cnn(const PerceptionVars<S>& out, const SymbolTargets<S>& t, double psi = 2.0) {
  CnnLoss<S> l;
  l.exist = loss_exist(out.exist_prob, t.exist, t.exist_weights, psi);
  l.coor = masked_l1(out.coord_raw, t.coords, t.coord_mask);
  l.size = masked_l1(out.size_raw, t.sizes, t.size_mask);
  l.total = ad::add(ad::add(l.exist, l.coor), l.size);
  return l;
}

}  // namespace insight
