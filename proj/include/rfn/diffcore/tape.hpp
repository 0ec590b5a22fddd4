#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rfn/diffcore/array.hpp"
#include "rfn/diffcore/parameters.hpp"

namespace rfn::diff {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const RealArray& value() const;
  double scalar() const { return value()[0]; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr; }
};

// Records a computation graph for one forward pass and replays it backwards.
// One tape per training step; a tape with gradients disabled is a plain
// evaluator that keeps no pullbacks.
class Tape {
 public:
  using Pullback = std::function<void(Tape&, const RealArray& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(RealArray v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }

  // A leaf whose gradient is readable through gradient() after backward().
  Var variable(RealArray v) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = grad_enabled_;
    return push(std::move(n));
  }

  // A leaf bound to a parameter; backward() adds into parameter.gradient.
  Var param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_ && p.trainable;
    return push(std::move(n));
  }

  // A leaf viewing an array owned elsewhere, never differentiated.
  Var view(const RealArray& v) {
    Node n;
    n.external = &v;
    return push(std::move(n));
  }

  const RealArray& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  const RealArray& value(Var v) const { return value(v.id); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  const RealArray& gradient(Var v) const {
    static const RealArray kEmpty;
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? kEmpty : n.grad;
  }

  // Appends a node computed from `inputs`. The pullback is kept only when
  // some input needs a gradient.
  Var record(RealArray value, std::initializer_list<Var> inputs, Pullback pullback) {
    Node n;
    n.value = std::move(value);
    for (const Var& in : inputs) {
      if (nodes_[in.id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.pullback = std::move(pullback);
    return push(std::move(n));
  }

  Var record(RealArray value, const std::vector<Var>& inputs, Pullback pullback) {
    Node n;
    n.value = std::move(value);
    for (const Var& in : inputs) {
      if (nodes_[in.id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.pullback = std::move(pullback);
    return push(std::move(n));
  }

  // Gradient slot for an input node, zero-initialized on first use.
  RealArray& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      const RealArray& v = value(id);
      n.grad = RealArray(v.rows(), v.cols());
    }
    return n.grad;
  }

  // Reverse sweep seeded with ones at `output`. Node gradients are reset at
  // the start, parameter gradients are accumulated (never reset here).
  void backward(Var output) {
    const RealArray& v = value(output);
    backward(output, RealArray(v.rows(), v.cols(), 1.0));
  }

  // Reverse sweep seeded with an explicit output cotangent.
  void backward(Var output, const RealArray& seed) {
    for (auto& n : nodes_) n.grad = RealArray();
    if (!nodes_[output.id].requires_grad) return;
    if (!seed.same_shape(value(output))) {
      throw UsageError("backward: cotangent shape does not match output");
    }
    grad_slot(output.id) = seed;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.pullback) n.pullback(*this, n.grad);
      if (n.param != nullptr) {
        auto& g = n.param->gradient;
        if (!g.same_shape(n.param->value)) n.param->zero_grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    RealArray value;
    const RealArray* external = nullptr;
    RealArray grad;
    Pullback pullback;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

inline const RealArray& Var::value() const { return tape->value(id); }

}  // namespace rfn::diff
