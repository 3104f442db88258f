// Copyright 2026 The wsaed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op returns a Var whose node records its inputs and a closure that
// pushes the node's gradient into those inputs. The graph is built only when
// some input requires a gradient and grad mode is enabled, so inference with
// NoGradGuard keeps no intermediate state alive.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wsaed/tensor.hpp"

namespace wsaed {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {})
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Independent copy of the value; never shares the node.
  Var clone() const { return Var(node_->value, node_->requires_grad, node_->name); }

  // Builds an op result. Inputs and the closure are recorded only when
  // the result needs a gradient.
  static Var make_result(Tensor<T> value, std::vector<Var> inputs,
                         std::function<void(Node<T>&)> backward_fn) {
    Var out(std::move(value));
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Backpropagates from a scalar root. Gradients accumulate into leaves;
// intermediate gradients and closures are released as the sweep passes them,
// so the graph can be backpropagated only once. `seed` is d(objective)/d(root),
// which lets callers accumulate weighted losses without an extra node.
template <typename T>
void backward(const Var<T>& root, T seed = T(1)) {
  WSAED_CHECK_SHAPE(root.value().size() == 1, "backward() needs a scalar root, got ",
                    shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Post-order DFS; `order` owns the nodes so clearing inputs below cannot
  // free a node that has not been processed yet.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      std::shared_ptr<Node<T>> child = top.first->inputs[top.second++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (!node.is_leaf()) {
      if (!node.grad.empty()) node.backward_fn(node);
      node.grad = Tensor<T>();
      node.backward_fn = nullptr;
      node.inputs.clear();
    }
    it->reset();
  }
}

}  // namespace wsaed
