#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/rng.hpp"
#include "insight/core/tape.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

// A parameter struct exposes `visit(f)` calling f(name, tensor) for every
// learnable tensor in a fixed order; the helpers below build on that.

template <typename Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

/// Concatenation of all parameters in visit order, widened to double.
template <typename Params>
Tensor<double> flatten(const Params& p) {
  std::vector<double> out;
  p.visit([&](const std::string&, const auto& t) {
    for (auto v : t.data()) out.push_back(static_cast<double>(v));
  });
  return Tensor<double>::vector(std::move(out));
}

template <typename Params>
void unflatten(Params& p, const Tensor<double>& flat) {
  std::size_t at = 0;
  p.visit([&](const std::string&, auto& t) {
    using S = typename std::decay_t<decltype(t)>::value_type;
    if (at + t.size() > flat.size()) throw DimensionError("unflatten: vector too short");
    for (auto& v : t.data()) v = static_cast<S>(flat[at++]);
  });
  if (at != flat.size()) throw DimensionError("unflatten: vector too long");
}

template <typename Params>
bool all_finite(const Params& p) {
  bool ok = true;
  p.visit([&](const std::string&, const auto& t) { ok = ok && t.all_finite(); });
  return ok;
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense and conv layers.
template <typename S>
void init_uniform_fan_in(Tensor<S>& t, std::size_t fan_in, Rng& rng) {
  const double bound = fan_in ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-bound, bound));
}

/// Binds parameter tensors to tape leaves on first use. A frozen binding
/// records them as constants so no gradient flows into them.
template <typename S>
class Binding {
 public:
  explicit Binding(Tape<S>& tape, bool trainable = true) : tape_(&tape), trainable_(trainable) {}

  Var<S> operator()(const Tensor<S>& t) {
    auto it = vars_.find(&t);
    if (it != vars_.end()) return it->second;
    Var<S> v = trainable_ ? tape_->parameter(t) : tape_->constant(t);
    vars_.emplace(&t, v);
    return v;
  }

  Tape<S>& tape() const { return *tape_; }
  bool trainable() const noexcept { return trainable_; }

  /// Gradient for a bound tensor; empty tensor when it was never bound.
  Tensor<S> grad(const Tensor<S>& t) const {
    auto it = vars_.find(&t);
    if (it == vars_.end() || !trainable_) return Tensor<S>();
    return tape_->grad(it->second);
  }

 private:
  Tape<S>* tape_;
  bool trainable_;
  std::unordered_map<const Tensor<S>*, Var<S>> vars_;
};

/// Named gradient list aligned with a parameter struct's visit order.
template <typename S>
struct GradEntry {
  std::string name;
  Tensor<S>* param;
  Tensor<S> grad;  // empty: no gradient this step
};

template <typename S, typename Params>
void collect_grads(Params& p, const Binding<S>& binding, const std::string& prefix,
                   std::vector<GradEntry<S>>& out) {
  p.visit([&](const std::string& name, Tensor<S>& t) { out.push_back({prefix + name, &t, binding.grad(t)}); });
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
template <typename S>
double clip_grad_norm(std::vector<GradEntry<S>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (S v : g.grad.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-6));
    for (auto& g : grads)
      for (auto& v : g.grad.data()) v *= factor;
  }
  return norm;
}

/// Adam with coupled L2 weight decay (decay added to the gradient).
template <typename S>
class Adam {
 public:
  struct Options {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam() = default;
  explicit Adam(Options options) : options_(options) {}

  const Options& options() const noexcept { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  /// Updates every entry that carries a gradient; entries with an empty
  /// gradient keep their parameters and optimizer state untouched.
  void step(std::vector<GradEntry<S>>& grads) {
    for (auto& g : grads) {
      if (g.grad.empty()) continue;
      require_shape(g.grad.shape(), g.param->shape(), ("adam: gradient for " + g.name).c_str());
      auto& st = state_[g.name];
      if (st.m.size() != g.param->size()) {
        st.m.assign(g.param->size(), 0.0);
        st.v.assign(g.param->size(), 0.0);
        st.steps = 0;
      }
      ++st.steps;
      const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(st.steps));
      const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(st.steps));
      auto& p = *g.param;
      for (std::size_t i = 0; i < p.size(); ++i) {
        double grad = static_cast<double>(g.grad[i]) + options_.weight_decay * static_cast<double>(p[i]);
        st.m[i] = options_.beta1 * st.m[i] + (1 - options_.beta1) * grad;
        st.v[i] = options_.beta2 * st.v[i] + (1 - options_.beta2) * grad * grad;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p[i] = static_cast<S>(static_cast<double>(p[i]) - options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
      }
    }
  }

 private:
  struct State {
    std::vector<double> m, v;
    long steps = 0;
  };
  Options options_;
  std::map<std::string, State> state_;
};

}  // namespace insight
