#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "chimle/tensor.hpp"

namespace chimle {

/// Handle to a value recorded on a tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Records one forward pass; `backward` replays it in reverse.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaves created with a gradient sink hand their final
/// gradient to the sink after each backward sweep; repeated sweeps accumulate.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicTape&, std::uint32_t self)>;
  using GradSink = std::function<void(std::span<const T>)>;

  Var constant(TensorT value) { return push(std::move(value), {}, nullptr, nullptr, false); }

  /// Leaf that receives a gradient kept on the tape (read it back with grad()).
  Var variable(TensorT value) { return push(std::move(value), {}, nullptr, nullptr, true); }

  /// Leaf whose gradient is delivered to `sink` (if any) after backward.
  Var leaf(TensorT value, GradSink sink) {
    const bool needs = static_cast<bool>(sink);
    return push(std::move(value), {}, nullptr, std::move(sink), needs);
  }

  /// Leaf that accumulates straight into `target.grad`.
  Var leaf(TensorT& target) {
    if (!target.requires_grad) return constant(target);
    TensorT* ptr = &target;
    return leaf(target, [ptr](std::span<const T> g) { ptr->accumulate_grad(g.data(), g.size()); });
  }

  /// Appends an op result. `fn` is dropped when no input needs a gradient.
  Var record(TensorT value, std::vector<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
    return push(std::move(value), std::move(inputs), needs ? std::move(fn) : nullptr, nullptr, needs);
  }

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  const std::vector<Var>& inputs(std::uint32_t id) const { return nodes_.at(id).inputs; }

  /// Gradient buffer of a node, allocated (zeroed) on first touch.
  std::vector<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.numel()) n.grad.assign(n.value.numel(), T(0));
    return n.grad;
  }
  std::vector<T>& grad(std::uint32_t id) { return grad(Var{id}); }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Internal gradients are reset first;
  /// sinks accumulate, so two sweeps double every sink gradient.
  void backward(Var loss) {
    const Node& l = nodes_.at(loss.id);
    if (l.value.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(l.value.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad(loss)[0] = T(1);
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (n.sink && !n.grad.empty()) n.sink(std::span<const T>(n.grad));
    }
  }

 private:
  struct Node {
    TensorT value;
    std::vector<Var> inputs;
    BackwardFn backward;
    GradSink sink;
    std::vector<T> grad;
    bool needs_grad = false;
  };

  Var push(TensorT value, std::vector<Var> inputs, BackwardFn fn, GradSink sink, bool needs) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.sink = std::move(sink);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

}  // namespace chimle
