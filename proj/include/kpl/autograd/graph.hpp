#pragma once

#include "kpl/core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace kpl::ag {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII guard disabling graph recording (inference / oracle paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
};

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<S>&)> backward;  // gradient w.r.t. value -> accumulate into parents

  Tensor<S>& ensure_grad() {
    if (!has_grad) {
      grad = Tensor<S>(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

/// Handle to a node in the dynamically built computation graph. Graphs are
/// rebuilt every step. Backprop walks a reverse DFS postorder, which is a
/// topological order fixed by the graph structure alone, so gradient
/// accumulation order is reproducible even when parts of the graph were
/// built concurrently.
template <class S>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<S>>;

  Var() = default;
  explicit Var(Tensor<S> v, bool requires_grad = false) : n_(std::make_shared<Node<S>>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor<S>& value() const { return n_->value; }
  Tensor<S>& value() { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  Tensor<S>& grad() { return n_->ensure_grad(); }
  bool has_grad() const { return n_ && n_->has_grad; }
  void zero_grad() {
    if (n_ && n_->has_grad) n_->grad.set_zero();
  }

  NodePtr node() const { return n_; }

  /// Backprop from a scalar output. Accumulates into leaf grads.
  void backward() const {
    if (!defined()) throw std::logic_error("backward on undefined Var");
    if (n_->value.size() != 1) throw std::logic_error("backward requires a scalar output");
    Tensor<S> seed(n_->value.shape(), S(1));
    backward(seed);
  }

  void backward(const Tensor<S>& seed) const {
    if (!n_->requires_grad) return;
    std::vector<Node<S>*> postorder;
    std::unordered_set<Node<S>*> visited;
    struct Frame {
      Node<S>* node;
      size_t next_parent;
    };
    std::vector<Frame> stack;
    visited.insert(n_.get());
    stack.push_back({n_.get(), 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node<S>* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
      } else {
        postorder.push_back(f.node);
        stack.pop_back();
      }
    }
    n_->ensure_grad().array() += seed.array();
    for (auto it = postorder.rbegin(); it != postorder.rend(); ++it) {
      if ((*it)->backward && (*it)->has_grad) (*it)->backward((*it)->grad);
    }
  }

 private:
  NodePtr n_;
};

/// Leaf helpers.
template <class S>
Var<S> constant(Tensor<S> v) {
  return Var<S>(std::move(v), false);
}

template <class S>
Var<S> parameter(Tensor<S> v) {
  return Var<S>(std::move(v), true);
}

/// Creates an op node. `fn(grad_out)` must accumulate into the parents'
/// grads (capture their NodePtrs). The closure is dropped when grad mode is
/// off or no parent needs gradients.
template <class S, class F>
Var<S> make_op(Tensor<S> out, std::initializer_list<Var<S>> parents, F&& fn) {
  Var<S> result(std::move(out), false);
  bool need = grad_mode();
  if (need) {
    bool any = false;
    for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
    need = any;
  }
  if (need) {
    auto node = result.node();
    node->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backward = std::forward<F>(fn);
  }
  return result;
}

}  // namespace kpl::ag
