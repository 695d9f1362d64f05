#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "insight/core/ops.hpp"
#include "insight/core/params.hpp"

namespace insight {

enum class EqlFn { Square, Cube, Constant, Identity, Multiply, Add };

inline std::string to_string(EqlFn f) {
  switch (f) {
    case EqlFn::Square: return "square";
    case EqlFn::Cube: return "cube";
    case EqlFn::Constant: return "constant";
    case EqlFn::Identity: return "identity";
    case EqlFn::Multiply: return "multiply";
    default: return "add";
  }
}

inline EqlFn parse_eql_fn(const std::string& s) {
  for (auto f : {EqlFn::Square, EqlFn::Cube, EqlFn::Constant, EqlFn::Identity, EqlFn::Multiply, EqlFn::Add})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown EQL activation '" + s + "' (expected square, cube, constant, identity, multiply or add)");
}

inline bool is_binary(EqlFn f) { return f == EqlFn::Multiply || f == EqlFn::Add; }

struct EqlConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_layers = 1;
  std::size_t repetitions = 4;
  std::vector<EqlFn> functions{EqlFn::Square, EqlFn::Cube, EqlFn::Constant, EqlFn::Identity, EqlFn::Multiply, EqlFn::Add};
  double temperature = 10.0;
  std::size_t actions = 3;
  std::size_t logits_per_action = 2;

  std::size_t unary_count() const {
    std::size_t n = 0;
    for (auto f : functions) n += !is_binary(f);
    return n;
  }
  std::size_t binary_count() const { return functions.size() - unary_count(); }
  /// Pre-activation width d_k: r unary slots per unary function, then r
  /// input pairs per binary function.
  std::size_t pre_width() const { return repetitions * (unary_count() + 2 * binary_count()); }
  /// Post-activation width d'_k.
  std::size_t post_width() const { return repetitions * functions.size(); }
  std::size_t output_dim() const { return actions * logits_per_action; }

  void validate() const {
    if (input_dim == 0) throw ConfigError("EQL input_dim must be positive");
    if (repetitions == 0) throw ConfigError("EQL repetitions must be at least 1");
    if (functions.empty()) throw ConfigError("EQL needs at least one activation function");
    if (actions == 0 || logits_per_action == 0) throw ConfigError("EQL needs at least one logit per action");
    if (!(temperature > 0)) throw ConfigError("EQL temperature must be positive");
    for (std::size_t i = 0; i < functions.size(); ++i)
      for (std::size_t j = i + 1; j < functions.size(); ++j)
        if (functions[i] == functions[j]) throw ConfigError("EQL activation listed twice: " + to_string(functions[i]));
  }
  friend bool operator==(const EqlConfig&, const EqlConfig&) = default;
};

/// Slot plan of one activation layer. Unary functions come first, each
/// repeated r times, followed by the binary functions whose r units read
/// consecutive pairs of pre-activations.
struct EqlUnit {
  EqlFn fn;
  std::size_t in0, in1;  // pre-activation indices; in1 == in0 for unary units
};

inline std::vector<EqlUnit> eql_units(const EqlConfig& c) {
  std::vector<EqlUnit> units;
  std::size_t at = 0;
  for (auto f : c.functions)
    if (!is_binary(f))
      for (std::size_t r = 0; r < c.repetitions; ++r, ++at) units.push_back({f, at, at});
  for (auto f : c.functions)
    if (is_binary(f))
      for (std::size_t r = 0; r < c.repetitions; ++r, at += 2) units.push_back({f, at, at + 1});
  return units;
}

template <typename S>
struct EqlParams {
  std::vector<Tensor<S>> w, b;  // hidden layers then the output layer

  EqlParams() = default;
  EqlParams(const EqlConfig& c, Rng& rng) {
    c.validate();
    std::size_t in = c.input_dim;
    for (std::size_t k = 0; k <= c.hidden_layers; ++k) {
      const bool out = k == c.hidden_layers;
      const std::size_t rows = out ? c.output_dim() : c.pre_width();
      w.emplace_back(Shape{rows, in});
      b.emplace_back(Shape{rows});
      init_uniform_fan_in(w.back(), in, rng);
      init_uniform_fan_in(b.back(), in, rng);
      in = c.post_width();
    }
    apply_structure(c);
  }

  /// Constant units ignore their inputs: zero those weight rows.
  void apply_structure(const EqlConfig& c) {
    const auto mask = weight_masks(c);
    for (std::size_t k = 0; k < w.size(); ++k)
      for (std::size_t i = 0; i < w[k].size(); ++i) w[k][i] *= mask[k][i];
  }

  /// 1 for free weights, 0 for the input rows of constant units.
  std::vector<Tensor<S>> weight_masks(const EqlConfig& c) const {
    std::vector<Tensor<S>> out;
    const auto units = eql_units(c);
    for (std::size_t k = 0; k < w.size(); ++k) {
      Tensor<S> m(w[k].shape(), S(1));
      if (k < c.hidden_layers) {
        const std::size_t cols = w[k].dim(1);
        for (const auto& u : units)
          if (u.fn == EqlFn::Constant)
            for (std::size_t j = 0; j < cols; ++j) m[u.in0 * cols + j] = S(0);
      }
      out.push_back(std::move(m));
    }
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      f("layer" + std::to_string(k) + ".w", w[k]);
      f("layer" + std::to_string(k) + ".b", b[k]);
    }
  }
  template <typename F>
  void visit(F&& f) const {
    for (std::size_t k = 0; k < w.size(); ++k) {
      f("layer" + std::to_string(k) + ".w", w[k]);
      f("layer" + std::to_string(k) + ".b", b[k]);
    }
  }

  template <typename To>
  EqlParams<To> cast() const {
    EqlParams<To> out;
    for (const auto& t : w) out.w.push_back(t.template cast<To>());
    for (const auto& t : b) out.b.push_back(t.template cast<To>());
    return out;
  }

  void check(const EqlConfig& c) const {
    if (w.size() != c.hidden_layers + 1 || b.size() != w.size()) throw DimensionError("EQL params do not match config depth");
    std::size_t in = c.input_dim;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const std::size_t rows = k == c.hidden_layers ? c.output_dim() : c.pre_width();
      require_shape(w[k].shape(), Shape{rows, in}, "EQL weight");
      require_shape(b[k].shape(), Shape{rows}, "EQL bias");
      in = c.post_width();
    }
  }
};

namespace ad {

/// EQL activation: unary slots map g -> f(g), binary units map a pair.
/// g is [d_k] or [B×d_k]; the result has d'_k columns.
template <typename S>
Var<S> eql_activation(const Var<S>& g, const EqlConfig& c) {
  const auto [rows, cols] = detail::rows_cols(g.shape());
  if (cols != c.pre_width()) {
    throw DimensionError("EQL activation: expected " + std::to_string(c.pre_width()) + " pre-activations, got " +
                         std::to_string(cols));
  }
  auto units = std::make_shared<std::vector<EqlUnit>>(eql_units(c));
  const std::size_t out_cols = units->size();
  Shape shape = g.shape();
  if (shape.empty()) shape = Shape{1};
  shape.back() = out_cols;
  Tensor<S> out(shape);
  const auto& gv = g.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = gv.data().data() + r * cols;
    for (std::size_t u = 0; u < out_cols; ++u) {
      const auto& unit = (*units)[u];
      const S a = in[unit.in0], b = in[unit.in1];
      S y;
      switch (unit.fn) {
        case EqlFn::Square: y = a * a; break;
        case EqlFn::Cube: y = a * a * a; break;
        case EqlFn::Multiply: y = a * b; break;
        case EqlFn::Add: y = a + b; break;
        default: y = a;  // identity, and constant (whose input is its bias)
      }
      out[r * out_cols + u] = y;
    }
  }
  const std::size_t gi = g.id();
  return g.tape().record(std::move(out), {g}, [=, rows = rows, cols = cols](Tape<S>& t, std::size_t self) {
    const auto& up = t.grad_buffer(self);
    const auto& gv = t.value(gi);
    auto& gg = t.grad_buffer(gi);
    for (std::size_t r = 0; r < rows; ++r) {
      const S* in = gv.data().data() + r * cols;
      S* d = gg.data().data() + r * cols;
      for (std::size_t u = 0; u < out_cols; ++u) {
        const auto& unit = (*units)[u];
        const S gu = up[r * out_cols + u], a = in[unit.in0], b = in[unit.in1];
        switch (unit.fn) {
          case EqlFn::Square: d[unit.in0] += gu * S(2) * a; break;
          case EqlFn::Cube: d[unit.in0] += gu * S(3) * a * a; break;
          case EqlFn::Multiply:
            d[unit.in0] += gu * b;
            d[unit.in1] += gu * a;
            break;
          case EqlFn::Add:
            d[unit.in0] += gu;
            d[unit.in1] += gu;
            break;
          default: d[unit.in0] += gu;
        }
      }
    }
  });
}

/// Smoothed square-root penalty summed over entries.
template <typename S>
Var<S> smoothed_sqrt_penalty(const Var<S>& x, const Tensor<S>& mask, double a) {
  require_shape(mask.shape(), x.shape(), "penalty mask");
  if (!(a > 0)) throw ContractError("regulariser smoothing parameter must be positive");
  auto& tape = x.tape();
  const auto& xv = x.value();
  double total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mask[i] == S(0)) continue;
    const double w = static_cast<double>(xv[i]);
    total += std::abs(w) >= a ? std::sqrt(std::abs(w))
                              : std::sqrt(-std::pow(w, 4) / (8 * a * a * a) + 3 * w * w / (4 * a) + 3 * a / 8);
    tape.note_kink(static_cast<S>(std::abs(w) - a));  // second derivative jumps at |w| = a
  }
  auto m = std::make_shared<Tensor<S>>(mask);
  const std::size_t xi = x.id();
  return tape.record(Tensor<S>::scalar(static_cast<S>(total)), {x}, [=](Tape<S>& t, std::size_t self) {
    const double g = static_cast<double>(t.grad_buffer(self)[0]);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if ((*m)[i] == S(0)) continue;
      const double w = static_cast<double>(xv[i]);
      double d;
      if (std::abs(w) >= a) {
        d = (w > 0 ? 1.0 : -1.0) / (2 * std::sqrt(std::abs(w)));
      } else {
        const double inner = -std::pow(w, 4) / (8 * a * a * a) + 3 * w * w / (4 * a) + 3 * a / 8;
        d = (-w * w * w / (2 * a * a * a) + 3 * w / (2 * a)) / (2 * std::sqrt(inner));
      }
      gx[i] += static_cast<S>(g * d);
    }
  });
}

}  // namespace ad

/// Scalar smoothed square-root term, for reference and tests.
inline double smoothed_sqrt(double w, double a) {
  if (std::abs(w) >= a) return std::sqrt(std::abs(w));
  return std::sqrt(-std::pow(w, 4) / (8 * a * a * a) + 3 * w * w / (4 * a) + 3 * a / 8);
}

inline constexpr double kRegSmoothing = 0.05;

/// Pre-softmax logits t_eql * (output layer), shape [B×A*G] (or [A*G]).
template <typename S>
Var<S> eql_logits(const EqlParams<S>& p, const EqlConfig& c, Binding<S>& bind, const Var<S>& x) {
  p.check(c);
  const std::size_t cols = ad::detail::rows_cols(x.shape()).second;
  if (cols != c.input_dim) {
    throw DimensionError("EQL input: expected " + std::to_string(c.input_dim) + " coordinates, got " +
                         std::to_string(cols));
  }
  const auto masks = p.weight_masks(c);
  Var<S> z = x;
  for (std::size_t k = 0; k < c.hidden_layers; ++k) {
    const Var<S> w = ad::mul_const(bind(p.w[k]), masks[k]);
    z = ad::eql_activation(ad::affine(w, bind(p.b[k]), z), c);
    if (!z.value().all_finite()) throw NumericError("EQL layer " + std::to_string(k) + " produced a non-finite value");
  }
  const Var<S> out = ad::affine(bind(p.w.back()), bind(p.b.back()), z);
  if (!out.value().all_finite()) throw NumericError("EQL output layer produced a non-finite value");
  return ad::scale(out, static_cast<S>(c.temperature));
}

/// Action log-probabilities: each action's exponent mass sums its group of
/// logits, log p_a = logsumexp(group a) - logsumexp(all).
template <typename S>
Var<S> eql_log_probs(const EqlParams<S>& p, const EqlConfig& c, Binding<S>& bind, const Var<S>& x) {
  return ad::grouped_log_softmax(eql_logits(p, c, bind, x), c.logits_per_action);
}

template <typename S>
Tensor<S> eql_forward(const EqlParams<S>& p, const EqlConfig& c, const Tensor<S>& x) {
  Tape<S> tape;
  Binding<S> bind(tape, false);
  return eql_logits(p, c, bind, tape.constant(x)).value();
}

/// The penalty over every free W and b entry (the structurally zero input rows of
/// constant units are excluded).
template <typename S>
Var<S> reg_loss(const EqlParams<S>& p, const EqlConfig& c, Binding<S>& bind, double a = kRegSmoothing) {
  const auto masks = p.weight_masks(c);
  std::vector<Var<S>> terms;
  for (std::size_t k = 0; k < p.w.size(); ++k) {
    terms.push_back(ad::smoothed_sqrt_penalty(bind(p.w[k]), masks[k], a));
    terms.push_back(ad::smoothed_sqrt_penalty(bind(p.b[k]), Tensor<S>(p.b[k].shape(), S(1)), a));
  }
  return ad::add_all(terms);
}

/// Copy with every |entry| < threshold set to exactly zero.
template <typename S>
EqlParams<S> prune(const EqlParams<S>& p, double threshold) {
  if (!(threshold >= 0)) throw ContractError("prune threshold must be non-negative");
  EqlParams<S> out = p;
  out.visit([&](const std::string&, Tensor<S>& t) {
    for (auto& v : t.data())
      if (std::abs(static_cast<double>(v)) < threshold) v = S(0);
  });
  return out;
}

inline constexpr double kPruneThreshold = 0.01;

}  // namespace insight
