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

#include <algorithm>
#include <random>
#include <vector>

#include "revcurr/model.hpp"
#include "revcurr/tokenizer.hpp"

namespace revcurr::testing {

// d=8, two heads, one layer each side, L=2 over vocab 8.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.levels = 2;
  c.vocab_sizes = {8, 8};
  c.max_history = 4;
  c.max_prefix_items = 4;
  c.num_users = 3;
  c.dropout = 0.0;
  return c;
}

// Rows of random token histories; lengths[r] real events, left padded.
inline Batch random_batch(const ModelConfig& c, std::vector<int> lengths,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.size = lengths.size();
  b.levels = c.levels;
  for (int len : lengths) b.width = std::max<std::size_t>(b.width, len);
  const std::size_t L = c.levels;
  b.history_tokens.assign(b.size * b.width * L, 0);
  b.history_behaviors.assign(b.size * b.width, 0);
  b.mask.assign(b.size * b.width, 0);
  b.history_items.assign(b.size * b.width, -1);
  b.lengths = lengths;
  for (std::size_t r = 0; r < b.size; ++r) {
    for (int t = 0; t < lengths[r]; ++t) {
      const std::size_t s = r * b.width + b.slot(r, t);
      for (std::size_t l = 0; l < L; ++l) {
        b.history_tokens[s * L + l] = static_cast<int>(rng() % c.vocab_sizes[l]);
      }
      b.history_behaviors[s] = static_cast<int>(rng() % kNumBehaviors);
      b.mask[s] = 1;
      b.history_items[s] = static_cast<ItemId>(rng() % 50);
    }
    for (std::size_t l = 0; l < L; ++l) {
      b.target_tokens.push_back(static_cast<int>(rng() % c.vocab_sizes[l]));
    }
    b.target_items.push_back(0);
    b.target_behaviors.push_back(Behavior::kPay);
    b.users.push_back(static_cast<UserId>(r));
  }
  return b;
}

// Full forward: encoder, query, relevance, curriculum, decoder with the
// selected items as prefix. The top-k choice is piecewise constant, so the
// relevance enters the objective directly rather than through the mask.
inline ad::Var tiny_objective(const ModelParams& params, const ModelConfig& c,
                              const Batch& batch, const std::vector<double>& w) {
  using ad::Var;
  const auto states = encode_history(params, c, batch);
  const Var q = build_query(params, c, batch.users);
  std::vector<DecoderRow> rows(batch.size);
  std::vector<Var> terms;
  const std::size_t L = c.levels;
  for (std::size_t r = 0; r < batch.size; ++r) {
    const std::span<const std::uint8_t> valid(batch.mask.data() + r * batch.width,
                                              batch.width);
    const Var s = score_relevance(ad::slice_rows(q, r, 1), states.event_rows(r), valid);
    const auto cur = select_curriculum(s, 0.5, 2);
    for (int t : cur.indices) {
      for (std::size_t l = 0; l < L; ++l) {
        rows[r].tokens.push_back(
            batch.history_tokens[(r * batch.width + t) * L + l]);
      }
    }
    rows[r].prefix_length = rows[r].tokens.size();
    for (std::size_t l = 0; l < L; ++l) {
      rows[r].tokens.push_back(batch.target_tokens[r * L + l]);
    }
    terms.push_back(ad::weighted_sum(
        cur.relevance, std::span<const double>(w.data(), batch.width)));
  }
  // Next-token targets: input position j + 1 for each output position j.
  std::vector<std::vector<int>> targets(L);
  for (std::size_t r = 0; r < batch.size; ++r) {
    for (std::size_t j = 0; j < rows[r].tokens.size(); ++j) {
      targets[j % L].push_back(rows[r].tokens[j]);
    }
    rows[r].tokens.pop_back();
  }
  const auto logits = decode_forward(params, c, states, rows);
  for (std::size_t l = 0; l < L; ++l) {
    terms.push_back(ad::mean(ad::cross_entropy(logits.level_logits[l], targets[l])));
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

}  // namespace revcurr::testing
