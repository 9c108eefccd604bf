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

#include "revcurr/data.hpp"
#include "revcurr/model.hpp"
#include "revcurr/tokenizer.hpp"

namespace revcurr::testing {

// A few dozen users over a small catalog, tokenized, split both ways.
struct TinyWorld {
  SyntheticDataset data;
  SemanticCodebooks tokenizer;
  Split mixed;
  Split pay;
  ModelConfig config;
};

inline TinyWorld make_tiny_world(std::uint64_t seed = 0, int users = 40,
                                 int items = 40) {
  TinyWorld w;
  SyntheticOptions opt;
  opt.num_users = users;
  opt.num_items = items;
  opt.num_categories = 5;
  opt.events_per_user = 60;
  opt.conversion_rate = 0.05;
  opt.embedding_dim = 8;
  opt.seed = seed;
  w.data = generate_synthetic(opt);
  w.tokenizer = SemanticCodebooks::fit(
      w.data.catalog.embedding_table(),
      {.levels = 3, .codebook_size = 4, .seed = seed});
  const std::size_t history = 12;
  w.mixed = split_examples(truncate_before_holdout(w.data.sequences, Behavior::kPay),
                           std::nullopt, history);
  w.pay = split_examples(w.data.sequences, Behavior::kPay, history);
  ModelConfig& c = w.config;
  c.d = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.levels = w.tokenizer.levels();
  c.vocab_sizes = w.tokenizer.vocab_sizes();
  c.max_history = static_cast<int>(history);
  c.max_prefix_items = 4;
  c.num_users = users;
  c.dropout = 0.0;
  return w;
}

}  // namespace revcurr::testing
