#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lesionseg/tensor.hpp"

namespace lesionseg {

// Named, trainable tensor. Gradients accumulate into `grad` when a tape that
// touched the parameter runs backward.
template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Param() = default;
  Param(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), S(0)); }
};

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated on demand during backward
  bool needs_grad = false;
  bool grad_alloc = false;
  std::function<void()> backward_fn;  // captures parent vars; reads this->grad
  Param<S>* param = nullptr;          // non-null for parameter leaves

  Tensor<S>& grad_ref() {
    if (!grad_alloc) {
      grad = Tensor<S>(value.shape);
      grad_alloc = true;
    }
    return grad;
  }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

// Define-by-run tape. Nodes are appended in creation order, which is a valid
// topological order, so backward is a single reverse sweep.
template <typename S>
class Tape {
 public:
  Var<S> input(Tensor<S> v, bool needs_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->needs_grad = needs_grad;
    order_.push_back(n);
    return n;
  }

  Var<S> leaf(Param<S>& p) {
    auto it = leaf_cache_.find(&p);
    if (it != leaf_cache_.end()) return it->second;
    auto n = std::make_shared<Node<S>>();
    n->value = p.value;
    n->needs_grad = true;
    n->param = &p;
    order_.push_back(n);
    leaf_cache_.emplace(&p, n);
    leaf_order_.push_back(n);
    return n;
  }

  Var<S> make(Tensor<S> v, std::vector<Var<S>> parents) {
    return make_impl(std::move(v), std::move(parents));
  }

  // Runs reverse-mode accumulation from a scalar root, then exports leaf
  // gradients into their Params.
  void backward(const Var<S>& root) {
    if (root->value.numel() != 1) throw NumericError("backward root must be scalar");
    root->grad_ref()[0] = S(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<S>& n = **it;
      if (n.needs_grad && n.grad_alloc && n.backward_fn) n.backward_fn();
    }
    for (auto& leaf : leaf_order_) {
      if (!leaf->grad_alloc) continue;
      Tensor<S>& g = leaf->param->grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += leaf->grad[i];
    }
  }

  size_t size() const { return order_.size(); }

 private:
  Var<S> make_impl(Tensor<S> v, std::vector<Var<S>> parents) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    for (const auto& p : parents)
      if (p->needs_grad) n->needs_grad = true;
    order_.push_back(n);
    return n;
  }

  std::vector<Var<S>> order_;
  std::unordered_map<const Param<S>*, Var<S>> leaf_cache_;
  std::vector<Var<S>> leaf_order_;
};

// Accumulates `g` into a parent's gradient if it participates in backprop.
template <typename S>
inline void accumulate(const Var<S>& parent, const Tensor<S>& g) {
  if (!parent->needs_grad) return;
  Tensor<S>& dst = parent->grad_ref();
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
}

}  // namespace lesionseg
