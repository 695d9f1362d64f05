#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"

namespace insight {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a `Tape`. Cheap to copy; only valid while
/// the owning tape is alive.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
/// reverse sweep over ids is a valid topological order for backpropagation.
/// Single owner; not for concurrent use.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using VarT = Var<Scalar>;
  /// Called with the tape and the node id; reads grad(id) and accumulates
  /// into the gradients of the node's parents.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  VarT constant(TensorT value) { return push(std::move(value), false, nullptr); }
  VarT parameter(TensorT value) { return push(std::move(value), true, nullptr); }

  /// Record a derived node; it requires a gradient iff any parent does.
  VarT record(TensorT value, std::initializer_list<VarT> parents, BackwardFn backward) {
    bool any = false;
    for (const auto& p : parents) any = any || requires_grad(p.id());
    return push(std::move(value), any, any ? std::move(backward) : nullptr);
  }

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator for node `id`, allocated as zeros on first use.
  TensorT& grad_buffer(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
      node.grad = TensorT(node.value.shape());
    }
    return node.grad;
  }

  /// Gradient of the last backward output with respect to `v`; zeros when
  /// `v` did not influence the output.
  TensorT grad(const VarT& v) const {
    const auto& node = nodes_.at(v.id());
    if (node.grad.shape() == node.value.shape() && node.grad.size() == node.value.size()) return node.grad;
    return TensorT(node.value.shape());
  }

  void backward(const VarT& output) {
    if (output.size() != 1) {
      throw DimensionError("backward() needs a scalar output, got " + shape_str(output.shape()));
    }
    for (auto& n : nodes_) n.grad = TensorT();
    grad_buffer(output.id())[0] = Scalar(1);
    for (std::size_t id = output.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
      node.backward(*this, id);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest distance of any recorded input to a non-differentiable point
  /// (relu at 0, clamp edges, |x| at 0, ...). Gradient checks use it to
  /// reject instances where a central difference would straddle a kink.
  void note_kink(Scalar distance) {
    const Scalar d = distance < Scalar(0) ? -distance : distance;
    if (d < kink_margin_) kink_margin_ = d;
  }
  Scalar kink_margin() const noexcept { return kink_margin_; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  VarT push(TensorT value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), TensorT(), requires_grad, std::move(backward)});
    return VarT(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  Scalar kink_margin_ = std::numeric_limits<Scalar>::infinity();
};

}  // namespace insight
