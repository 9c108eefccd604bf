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

#include <algorithm>
#include <cmath>
#include <random>

#include "revcurr/data.hpp"
#include "revcurr/error.hpp"

namespace revcurr {

ItemEmbeddingTable SyntheticCatalog::embedding_table() const {
  ItemEmbeddingTable t;
  t.vectors = embeddings;
  t.ids.resize(num_items());
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    t.ids[i] = static_cast<ItemId>(i);
  }
  return t;
}

namespace {

SyntheticCatalog make_catalog(const SyntheticOptions& opt,
                              std::mt19937_64& rng) {
  SyntheticCatalog cat;
  cat.num_categories = opt.num_categories;
  const std::size_t dim = static_cast<std::size_t>(opt.embedding_dim);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.3);
  std::vector<double> centers(opt.num_categories * dim);
  for (double& v : centers) v = unit(rng);
  cat.item_category.resize(opt.num_items);
  cat.embeddings = ad::Tensor({static_cast<std::size_t>(opt.num_items), dim});
  for (int i = 0; i < opt.num_items; ++i) {
    const int c = i % opt.num_categories;
    cat.item_category[i] = c;
    for (std::size_t k = 0; k < dim; ++k) {
      cat.embeddings[i * dim + k] = centers[c * dim + k] + jitter(rng);
    }
  }
  return cat;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticOptions& opt) {
  if (opt.num_users < 1 || opt.num_categories < 1 || opt.events_per_user < 1) {
    throw ParameterError("synthetic: users, categories and events must be >= 1");
  }
  if (opt.num_items < opt.num_categories) {
    throw ParameterError("synthetic: num_items < num_categories");
  }
  if (!(opt.conversion_rate > 0.0 && opt.conversion_rate < 1.0)) {
    throw ParameterError("synthetic: conversion_rate must be in (0, 1)");
  }
  if (opt.cluster_length < 1) {
    throw ParameterError("synthetic: cluster_length must be >= 1");
  }
  if (opt.coherence < 0.0 || opt.coherence > 1.0) {
    throw ParameterError("synthetic: coherence must be in [0, 1]");
  }

  std::mt19937_64 rng(opt.seed);
  SyntheticDataset out;
  out.catalog = make_catalog(opt, rng);

  std::vector<std::vector<ItemId>> by_category(opt.num_categories);
  for (int i = 0; i < opt.num_items; ++i) {
    by_category[out.catalog.item_category[i]].push_back(i);
  }

  // Episode trigger probability r per regular step so that the realized pay
  // share c = r / (1 - r + r * E) where E is the mean episode length.
  const double cl = opt.cluster_length;
  const double episode_len =
      1.0 + opt.coherence * (cl + opt.noise_probability * (cl - 1.0));
  const double c = opt.conversion_rate;
  const double trigger = std::min(0.5, c / (1.0 - c * (episode_len - 1.0)));

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> any_category(0, opt.num_categories - 1);
  auto pick = [&](const std::vector<ItemId>& items) {
    return items[std::uniform_int_distribution<std::size_t>(
        0, items.size() - 1)(rng)];
  };
  const int min_len = std::max(1, opt.events_per_user * 3 / 4);
  const int max_len = std::max(min_len, opt.events_per_user * 5 / 4);
  std::uniform_int_distribution<int> stream_len(min_len, max_len);

  out.sequences.reserve(opt.num_users);
  for (int u = 0; u < opt.num_users; ++u) {
    InteractionSequence seq;
    seq.user = u;
    const int length = stream_len(rng);
    int interest = any_category(rng);
    auto drift = [&] {
      if (opt.num_categories > 1 && u01(rng) >= opt.stay_probability) {
        int next = any_category(rng);
        while (next == interest) next = any_category(rng);
        interest = next;
      }
    };
    auto noise_event = [&] {
      drift();
      const Behavior b = u01(rng) < 0.7 ? Behavior::kImpression : Behavior::kClick;
      seq.events.push_back({b, pick(by_category[interest])});
    };
    while (static_cast<int>(seq.events.size()) < length) {
      if (u01(rng) >= trigger) {
        drift();
        const double r = u01(rng);
        const Behavior b = r < 0.65   ? Behavior::kImpression
                           : r < 0.93 ? Behavior::kClick
                                      : Behavior::kAddToCart;
        seq.events.push_back({b, pick(by_category[interest])});
        continue;
      }
      const int target_category = any_category(rng);
      const auto& pool = by_category[target_category];
      ItemId bought = pick(pool);
      if (u01(rng) < opt.coherence) {
        std::vector<ItemId> cluster;
        for (int j = 0; j < opt.cluster_length; ++j) {
          if (j > 0 && u01(rng) < opt.noise_probability) noise_event();
          const Behavior b =
              u01(rng) < 0.6 ? Behavior::kClick : Behavior::kAddToCart;
          const ItemId item = pick(pool);
          cluster.push_back(item);
          seq.events.push_back({b, item});
        }
        if (u01(rng) < opt.revisit_probability) bought = pick(cluster);
      }
      seq.events.push_back({Behavior::kPay, bought});
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace revcurr
