#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "insight/core/error.hpp"
#include "insight/core/rng.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

/// Numerically shifted softmax of a logit vector.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  if (logits.size() == 0) throw DimensionError("softmax of an empty vector");
  const S mx = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor<S> out(logits.shape());
  S z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (auto& v : out.data()) v /= z;
  return out;
}

namespace detail {
template <typename S>
void require_distribution(const Tensor<S>& probs) {
  if (probs.size() == 0) throw DimensionError("empty probability vector");
  double total = 0;
  for (S p : probs.data()) {
    if (!(p >= S(0))) throw ContractError("probability vector has a negative or NaN entry");
    total += static_cast<double>(p);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("probabilities sum to " + std::to_string(total) + ", not 1");
  }
}
}  // namespace detail

/// Inverse-CDF draw from a categorical distribution.
template <typename S>
std::size_t categorical(const Tensor<S>& probs, Rng& rng) {
  detail::require_distribution(probs);
  const double u = rng.uniform();
  double acc = 0;
  std::size_t last_positive = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] <= S(0)) continue;
    last_positive = a;
    acc += static_cast<double>(probs[a]);
    if (u < acc) return a;
  }
  return last_positive;
}

template <typename S>
S log_prob(const Tensor<S>& probs, std::size_t action) {
  detail::require_distribution(probs);
  if (action >= probs.size()) throw ContractError("action index out of range");
  return std::log(probs[action]);
}

template <typename S>
S entropy(const Tensor<S>& probs) {
  detail::require_distribution(probs);
  S h = 0;
  for (S p : probs.data())
    if (p > S(0)) h -= p * std::log(p);
  return h;
}

template <typename S>
std::size_t argmax(const Tensor<S>& v) {
  if (v.size() == 0) throw DimensionError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(v.data().begin(), v.data().end()) - v.data().begin());
}

/// Elementwise clamp to [0,1] on plain tensors.
template <typename S>
Tensor<S> clip01(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i], S(0)), S(1));
  return out;
}

}  // namespace insight
