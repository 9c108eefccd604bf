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

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "revcurr/ad/tensor.hpp"

namespace revcurr::ad {

// One vertex of the computation graph. Interior nodes own references to their
// inputs, so a graph lives exactly as long as the last handle to its output.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' gradients.
  std::function<void(Node& self)> backward;
  bool requires_grad = false;

  Tensor& grad_buffer();
  void accumulate_grad(const Tensor& g);
};

// Value-semantic handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Leaf holding a trainable array.
  static Var parameter(Tensor value);
  // Leaf that never receives gradient.
  static Var constant(Tensor value);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  void zero_grad();

  // Reverse sweep from this node; seeds d(self)/d(self) with ones. The output
  // must be a scalar unless an explicit seed is supplied.
  void backward() const;
  void backward(const Tensor& seed) const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// While alive on the current thread, new nodes record no parents and never
// require gradient.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an interior node. `backward` is dropped when no input needs gradient.
Var make_node(Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> backward);

}  // namespace revcurr::ad
