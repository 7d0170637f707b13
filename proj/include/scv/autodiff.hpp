#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "scv/tensor.hpp"

namespace scv {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  // Reads self.grad and accumulates into the captured inputs.
  std::function<void(const Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  [[nodiscard]] bool has_grad() const noexcept { return !grad.empty(); }
};

/// Handle to a value in the computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] bool has_grad() const { return node_->has_grad(); }
  /// Gradient; zeros if nothing was accumulated.
  [[nodiscard]] Tensor<T> grad() const {
    return node_->has_grad() ? node_->grad : Tensor<T>(node_->value.shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  [[nodiscard]] Node<T>* node() const noexcept { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }
  [[nodiscard]] explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var<T>(std::move(n));
}

template <class T>
Var<T> make_constant(Tensor<T> value) {
  return make_leaf(std::move(value), false);
}

/// Records differentiable ops in execution order for one backward sweep.
/// Nodes that need no gradient are never recorded.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Wraps `value` as the output of an op over `inputs`. `backward` is only
  /// kept when at least one input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<const Var<T>*> inputs,
                std::function<void(const Node<T>&)> backward) {
    bool needs = false;
    for (const Var<T>* v : inputs) needs = needs || v->requires_grad();
    return record_if(std::move(value), needs, std::move(backward));
  }

  Var<T> record_if(Tensor<T> value, bool needs_grad, std::function<void(const Node<T>&)> backward) {
    if (consumed_) throw TapeError("tape already consumed by backward()");
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (needs_grad) {
      n->requires_grad = true;
      n->backward = std::move(backward);
      nodes_.push_back(n);
    }
    return Var<T>(std::move(n));
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients add
  /// into existing buffers, so callers zero parameter grads between steps.
  void backward(const Var<T>& loss) {
    if (consumed_) throw TapeError("tape already consumed by backward()");
    if (loss.value().size() != 1)
      throw TapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    consumed_ = true;
    if (!loss.requires_grad()) {
      nodes_.clear();
      return;
    }
    Node<T>* root = loss.node();
    root->grad_buffer()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.has_grad() && n.backward) n.backward(n);
      // Intermediate grads are not needed after their op has run.
      if (&n != root) n.grad = Tensor<T>();
      n.backward = nullptr;
    }
    nodes_.clear();
  }

  [[nodiscard]] bool consumed() const noexcept { return consumed_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool consumed_ = false;
};

/// Adds `g` into `v`'s gradient when `v` participates in differentiation.
template <class T, class F>
void accumulate(const Var<T>& v, F&& add_into) {
  if (v.requires_grad()) add_into(v.node()->grad_buffer());
}

}  // namespace scv
