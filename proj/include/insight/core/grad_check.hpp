#pragma once

#include <string>
#include <vector>

#include "insight/core/finite_difference.hpp"
#include "insight/core/params.hpp"
#include "insight/core/tape.hpp"

namespace insight {

/// Plain list of tensors usable wherever a parameter struct is expected.
template <typename S>
struct TensorList {
  std::vector<Tensor<S>> items;

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < items.size(); ++i) f(std::to_string(i), items[i]);
  }
  template <typename F>
  void visit(F&& f) const {
    for (std::size_t i = 0; i < items.size(); ++i) f(std::to_string(i), items[i]);
  }
};

struct GradCheck {
  double rel_error = 0;
  /// Distance of the instance to the nearest recorded kink; a central
  /// difference is only trustworthy when this is well above the step.
  double kink_margin = 0;
  std::size_t dims = 0;
};

/// Compares the tape gradient of `build(params, binding)` against central
/// differences over every entry of `params`.
template <typename Params, typename Build>
GradCheck check_gradient(Params params, Build&& build, double eps = 1e-5, Stencil stencil = Stencil::ThreePoint) {
  GradCheck out;
  Tape<double> tape;
  Binding<double> bind(tape);
  const Var<double> loss = build(params, bind);
  tape.backward(loss);
  std::vector<double> analytic;
  params.visit([&](const std::string&, const Tensor<double>& t) {
    const Tensor<double> g = bind.grad(t);
    for (std::size_t i = 0; i < t.size(); ++i) analytic.push_back(g.empty() ? 0.0 : g[i]);
  });
  out.kink_margin = tape.kink_margin();
  out.dims = analytic.size();

  const Tensor<double> theta = flatten(params);
  Params probe = params;
  const auto f = [&](const Tensor<double>& th) {
    unflatten(probe, th);
    Tape<double> t;
    Binding<double> b(t);
    return build(probe, b).value().item();
  };
  const Tensor<double> numeric = finite_difference_grad(f, theta, eps, stencil);
  out.rel_error = max_relative_error(Tensor<double>::vector(std::move(analytic)), numeric);
  return out;
}

}  // namespace insight
