#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "insight/core/kernels.hpp"
#include "insight/core/tape.hpp"
#include "insight/core/tensor.hpp"

// Differentiable primitives. Each op computes its value eagerly and, when any
// input requires a gradient, records a closure that pushes the output
// gradient back to its inputs.

namespace insight::ad {

namespace detail {

template <typename S>
Tape<S>& same_tape(const Var<S>& a, const Var<S>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

/// Rows/cols view of a tensor whose last axis is the feature axis.
inline std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t cols = s.back();
  return {cols ? shape_size(s) / cols : 0, cols};
}

template <typename S, typename F, typename DF>
Var<S> unary(const Var<S>& x, F f, DF df) {
  auto& tape = x.tape();
  Tensor<S> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {x}, [xi, df](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& xv = t.value(xi);
    const auto& yv = t.value(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense layers

/// y = W·x + b for x of shape [n] or a batch [B×n]; W is [m×n], b is [m].
template <typename S>
Var<S> affine(const Var<S>& W, const Var<S>& b, const Var<S>& x) {
  auto& tape = detail::same_tape(W, x);
  const auto& ws = W.shape();
  if (ws.size() != 2) throw DimensionError("affine: weight must be a matrix, got " + shape_str(ws));
  const std::size_t m = ws[0], n = ws[1];
  require_shape(b.shape(), Shape{m}, "affine bias");
  const auto& xs = x.shape();
  const bool batched = xs.size() == 2;
  if (!(xs.size() == 1 || batched) || xs.back() != n) {
    throw DimensionError("affine: input " + shape_str(xs) + " does not match weight " + shape_str(ws));
  }
  const std::size_t rows = batched ? xs[0] : 1;

  Tensor<S> out(batched ? Shape{rows, m} : Shape{m});
  std::vector<S> wt(n * m);
  kernels::transpose(m, n, W.value().data().data(), wt.data());
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(b.value().data().data(), m, out.data().data() + r * m);
  kernels::gemm_nn(rows, m, n, x.value().data().data(), wt.data(), out.data().data());

  const std::size_t wi = W.id(), bi = b.id(), xi = x.id();
  return tape.record(std::move(out), {W, b, x}, [=](Tape<S>& t, std::size_t self) {
    const S* g = t.grad_buffer(self).data().data();
    if (t.requires_grad(xi)) {
      kernels::gemm_nn(rows, n, m, g, t.value(wi).data().data(), t.grad_buffer(xi).data().data());
    }
    if (t.requires_grad(wi)) {
      kernels::gemm_tn(m, n, rows, g, t.value(xi).data().data(), t.grad_buffer(wi).data().data());
    }
    if (t.requires_grad(bi)) {
      S* gb = t.grad_buffer(bi).data().data();
      for (std::size_t r = 0; r < rows; ++r) kernels::axpy(m, S(1), g + r * m, gb);
    }
  });
}

/// Alias kept for call sites that read better as a layer.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& W, const Var<S>& b) {
  return affine(W, b, x);
}

/// 2-D convolution, x [B×C×H×W], weight [O×C×k×k], bias [O].
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& W, const Var<S>& b, std::size_t stride, std::size_t pad) {
  auto& tape = detail::same_tape(x, W);
  const auto& xs = x.shape();
  const auto& ws = W.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3] || ws[1] != xs[1]) {
    throw DimensionError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
  }
  const std::size_t batch = xs[0], outc = ws[0];
  require_shape(b.shape(), Shape{outc}, "conv2d bias");
  const kernels::ConvGeometry geo{xs[1], xs[2], xs[3], ws[2], stride, pad};
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2] || stride == 0) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), plane = oh * ow, patch = geo.patch();
  const std::size_t in_stride = xs[1] * xs[2] * xs[3];

  Tensor<S> out(Shape{batch, outc, oh, ow});
  std::vector<S> cols(patch * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::im2col(geo, x.value().data().data() + n * in_stride, cols.data());
    S* dst = out.data().data() + n * outc * plane;
    for (std::size_t o = 0; o < outc; ++o) std::fill_n(dst + o * plane, plane, b.value()[o]);
    kernels::gemm_nn(outc, plane, patch, W.value().data().data(), cols.data(), dst);
  }

  const std::size_t xi = x.id(), wi = W.id(), bi = b.id();
  return tape.record(std::move(out), {x, W, b}, [=](Tape<S>& t, std::size_t self) {
    const S* g = t.grad_buffer(self).data().data();
    const bool need_x = t.requires_grad(xi), need_w = t.requires_grad(wi), need_b = t.requires_grad(bi);
    std::vector<S> cols(patch * plane), cols_t(plane * patch), dcols(need_x ? patch * plane : 0);
    for (std::size_t n = 0; n < batch; ++n) {
      const S* gn = g + n * outc * plane;
      if (need_w) {
        kernels::im2col(geo, t.value(xi).data().data() + n * in_stride, cols.data());
        kernels::transpose(patch, plane, cols.data(), cols_t.data());
        kernels::gemm_nn(outc, patch, plane, gn, cols_t.data(), t.grad_buffer(wi).data().data());
      }
      if (need_b) {
        auto& gb = t.grad_buffer(bi);
        for (std::size_t o = 0; o < outc; ++o) {
          S acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += gn[o * plane + p];
          gb[o] += acc;
        }
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), S(0));
        kernels::gemm_tn(patch, plane, outc, t.value(wi).data().data(), gn, dcols.data());
        kernels::col2im(geo, dcols.data(), t.grad_buffer(xi).data().data() + n * in_stride);
      }
    }
  });
}

/// Row-wise layer normalisation over the last axis with affine gain/bias.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  auto& tape = detail::same_tape(x, gamma);
  const auto [rows, cols] = detail::rows_cols(x.shape());
  require_shape(gamma.shape(), Shape{cols}, "layer_norm gain");
  require_shape(beta.shape(), Shape{cols}, "layer_norm bias");
  Tensor<S> out(x.shape());
  auto xhat = std::make_shared<std::vector<S>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    S mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xv[r * cols + c];
    mu /= S(cols);
    S var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const S d = xv[r * cols + c] - mu;
      var += d * d;
    }
    var /= S(cols);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const S h = (xv[r * cols + c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = gamma.value()[c] * h + beta.value()[c];
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.record(std::move(out), {x, gamma, beta},
                     [=, rows = rows, cols = cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& gam = t.value(gi);
    if (t.requires_grad(gi)) {
      auto& gg = t.grad_buffer(gi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * (*xhat)[r * cols + c];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
    if (t.requires_grad(xi)) {
      auto& gx = t.grad_buffer(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        S sum_d = 0, sum_dh = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const S d = g[r * cols + c] * gam[c];
          sum_d += d;
          sum_dh += d * (*xhat)[r * cols + c];
        }
        const S scale = (*inv_std)[r] / S(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const S d = g[r * cols + c] * gam[c];
          gx[r * cols + c] += scale * (S(cols) * d - sum_d - (*xhat)[r * cols + c] * sum_dh);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> relu(const Var<S>& x) {
  for (S v : x.value().data()) x.tape().note_kink(v);
  return detail::unary(x, [](S v) { return v > S(0) || std::isnan(v) ? v : S(0); },
                       [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary(
      x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  return detail::unary(x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> exp(const Var<S>& x) {
  return detail::unary(x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> square(const Var<S>& x) {
  return detail::unary(x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

/// Elementwise clamp to [0,1]. The gradient passes through on the open
/// interval (0,1) and is zero on the clamped region, boundaries included.
template <typename S>
Var<S> clip01(const Var<S>& x) {
  for (S v : x.value().data()) x.tape().note_kink(std::min(std::abs(v), std::abs(v - S(1))));
  return detail::unary(x, [](S v) { return std::min(std::max(v, S(0)), S(1)); },
                       [](S v, S) { return (v > S(0) && v < S(1)) ? S(1) : S(0); });
}

template <typename S>
Var<S> scale(const Var<S>& x, S factor) {
  return detail::unary(x, [factor](S v) { return factor * v; }, [factor](S, S) { return factor; });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  auto& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "add");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {a, b}, [ai, bi](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    for (std::size_t id : {ai, bi}) {
      if (!t.requires_grad(id)) continue;
      auto& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  auto& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "sub");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {a, b}, [ai, bi](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  auto& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "mul");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {a, b}, [ai, bi](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      const auto& bv = t.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      const auto& av = t.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Elementwise product with a constant tensor (masks, fixed weights).
template <typename S>
Var<S> mul_const(const Var<S>& x, const Tensor<S>& c) {
  require_shape(c.shape(), x.shape(), "mul_const");
  auto& tape = x.tape();
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * c[i];
  auto cc = std::make_shared<Tensor<S>>(c);
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {x}, [xi, cc](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (*cc)[i];
  });
}

template <typename S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  auto& tape = x.tape();
  Tensor<S> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {x}, [xi](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Var<S> sum(const Var<S>& x) {
  auto& tape = x.tape();
  S acc = 0;
  for (S v : x.value().data()) acc += v;
  const std::size_t xi = x.id();
  return tape.record(Tensor<S>::scalar(acc), {x}, [xi](Tape<S>& t, std::size_t self) {
    const S g = t.grad_buffer(self)[0];
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), S(1) / S(x.size()));
}

/// Sum of a list of scalar vars.
template <typename S>
Var<S> add_all(const std::vector<Var<S>>& terms) {
  if (terms.empty()) throw ContractError("add_all: no terms");
  Var<S> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Distributions over the last axis

template <typename S>
Var<S> log_softmax(const Var<S>& x) {
  auto& tape = x.tape();
  const auto [rows, cols] = detail::rows_cols(x.shape());
  if (cols == 0) throw DimensionError("log_softmax of empty axis");
  Tensor<S> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = xv.data().data() + r * cols;
    const S mx = *std::max_element(row, row + cols);
    S z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const S lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {x}, [xi, rows = rows, cols = cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      S gs = 0;
      for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gs;
    }
  });
}

template <typename S>
Var<S> softmax(const Var<S>& x) {
  return exp(log_softmax(x));
}

/// Action log-probabilities when each action owns `group` consecutive
/// logits: log p_a = logsumexp(group a) - logsumexp(all). Output [.., A].
template <typename S>
Var<S> grouped_log_softmax(const Var<S>& x, std::size_t group) {
  auto& tape = x.tape();
  const auto [rows, cols] = detail::rows_cols(x.shape());
  if (group == 0 || cols == 0 || cols % group != 0) {
    throw DimensionError("grouped_log_softmax: " + std::to_string(cols) + " logits not divisible into groups of " +
                         std::to_string(group));
  }
  const std::size_t actions = cols / group;
  Shape out_shape = x.shape();
  if (out_shape.empty()) out_shape = Shape{1};
  out_shape.back() = actions;
  Tensor<S> out(out_shape);
  // Softmax over all logits and the row normaliser, kept for backward.
  auto probs = std::make_shared<std::vector<S>>(rows * cols);
  auto lse_all = std::make_shared<std::vector<S>>(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = xv.data().data() + r * cols;
    const S mx = *std::max_element(row, row + cols);
    S z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const S lse = mx + std::log(z);
    (*lse_all)[r] = lse;
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = std::exp(row[c] - lse);
    for (std::size_t a = 0; a < actions; ++a) {
      const S* grp = row + a * group;
      const S gm = *std::max_element(grp, grp + group);
      S gz = 0;
      for (std::size_t k = 0; k < group; ++k) gz += std::exp(grp[k] - gm);
      out[r * actions + a] = gm + std::log(gz) - lse;
    }
  }
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {x},
                     [=, rows = rows, cols = cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      S gs = 0;
      for (std::size_t a = 0; a < actions; ++a) gs += g[r * actions + a];
      for (std::size_t a = 0; a < actions; ++a) {
        // within-group share exp(x_c - logsumexp(group a))
        const S lse_group = y[r * actions + a] + (*lse_all)[r];
        for (std::size_t k = 0; k < group; ++k) {
          const std::size_t c = a * group + k;
          const S q = std::exp(xv[r * cols + c] - lse_group);
          gx[r * cols + c] += g[r * actions + a] * q - gs * (*probs)[r * cols + c];
        }
      }
    }
  });
}

/// Picks x[r, index[r]] from a [R×A] tensor.
template <typename S>
Var<S> gather(const Var<S>& x, const std::vector<std::size_t>& index) {
  auto& tape = x.tape();
  const auto [rows, cols] = detail::rows_cols(x.shape());
  if (index.size() != rows) throw DimensionError("gather: index count does not match rows");
  Tensor<S> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw ContractError("gather: index out of range");
    out[r] = x.value()[r * cols + index[r]];
  }
  const std::size_t xi = x.id();
  auto idx = std::make_shared<std::vector<std::size_t>>(index);
  return tape.record(std::move(out), {x}, [xi, idx, cols = cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < idx->size(); ++r) gx[r * cols + (*idx)[r]] += g[r];
  });
}

}  // namespace insight::ad
