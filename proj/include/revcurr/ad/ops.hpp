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

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "revcurr/ad/graph.hpp"

// Differentiable operations. Every array is viewed as a matrix (leading
// dimensions flattened into rows). Shapes must match exactly; the only
// broadcast is add_bias along the last axis.
namespace revcurr::ad {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// x [r, c] + bias [1, c] (or [c]) on every row.
Var add_bias(const Var& x, const Var& bias);
// x [r, c] with row i multiplied by s[i]; s has r values.
Var scale_rows(const Var& x, const Var& s);

Var relu(const Var& x);
// Inverted dropout; identity when rate == 0.
Var dropout(const Var& x, double rate, std::mt19937_64& rng);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);

// Row gather with scatter-add backward. Used for embedding lookup.
Var gather_rows(const Var& table, std::span<const int> ids);
inline Var embedding(const Var& table, std::span<const int> ids) {
  return gather_rows(table, ids);
}
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
// axis 0 stacks rows, axis 1 joins columns.
Var concat(const std::vector<Var>& parts, int axis);

Var sum(const Var& x);
Var mean(const Var& x);
// Scalar sum_i w_i x_i with constant weights.
Var weighted_sum(const Var& x, std::span<const double> weights);
// Mean over consecutive groups of `group` rows: [n*group, c] -> [n, c].
Var segment_mean(const Var& x, std::size_t group);

// Row-wise softmax of x / temperature with max subtraction. Entries equal to
// -inf get exactly zero mass.
Var softmax_rows(const Var& x, double temperature);
// Replaces entries where allowed[i] == 0 by `fill`; their gradient is zero.
Var apply_mask(const Var& x, std::span<const std::uint8_t> allowed,
               double fill = -std::numeric_limits<double>::infinity());
// Forward identity, zero backward contribution.
Var stop_gradient(const Var& x);
// hard - sg(soft) + soft, with the forward value equal to `hard` bit for bit
// (the composite form can round 1 - p + p away from 1).
Var straight_through(const Tensor& hard, const Var& soft);

// Per-row negative log-likelihood -log softmax(logits[r])[targets[r]].
// Returns [rows, 1].
Var cross_entropy(const Var& logits, std::span<const int> targets);

struct AttentionSpec {
  std::size_t batch = 1;
  std::size_t heads = 1;
  // Optional key validity, one entry per key row; empty means all valid.
  std::span<const std::uint8_t> key_valid;
  bool causal = false;
  // Optional: query block b reads key block key_block[b] out of key_blocks
  // blocks, so several query blocks can share one set of keys.
  std::span<const std::size_t> key_block;
  std::size_t key_blocks = 0;
};

// Multi-head scaled dot-product attention. q is [batch*nq, d], k and v are
// [batch*nk, d] (or [key_blocks*nk, d]); each query block attends only within
// its key block. Projections are applied by the caller.
Var attention(const Var& q, const Var& k, const Var& v,
              const AttentionSpec& spec);

}  // namespace revcurr::ad
