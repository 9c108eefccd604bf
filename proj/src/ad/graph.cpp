// Copyright 2026 The revcurr Authors.
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

#include "revcurr/ad/graph.hpp"

#include <unordered_set>

#include "revcurr/error.hpp"

namespace revcurr::ad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate_grad(const Tensor& g) {
  Tensor& buf = grad_buffer();
  if (g.size() != buf.size()) {
    throw DimensionError("gradient shape " + shape_string(g.shape()) +
                         " does not match value shape " +
                         shape_string(value.shape()));
  }
  double* dst = buf.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::backward() const {
  if (node_->value.size() != 1) {
    throw DimensionError("backward() without seed requires a scalar output");
  }
  backward(Tensor(node_->value.shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior gradients are transient; leaves keep theirs for the optimizer.
  for (Node* node : order) {
    if (!node->parents.empty()) node->grad = Tensor();
  }
}

Var make_node(Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (Var& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

}  // namespace revcurr::ad
