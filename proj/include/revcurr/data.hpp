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
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "revcurr/tokenizer.hpp"

namespace revcurr {

using UserId = std::int32_t;

// Stable integer codes 0..3; `kPay` is the conversion behavior.
enum class Behavior : std::uint8_t {
  kImpression = 0,
  kClick = 1,
  kAddToCart = 2,
  kPay = 3,
};
inline constexpr int kNumBehaviors = 4;

std::string behavior_name(Behavior b);
// Throws ParameterError for codes outside 0..3.
Behavior behavior_from_code(int code);
inline int behavior_code(Behavior b) { return static_cast<int>(b); }

struct Event {
  Behavior behavior;
  ItemId item;
  friend bool operator==(const Event&, const Event&) = default;
};

// Chronological history of one user.
struct InteractionSequence {
  UserId user = 0;
  std::vector<Event> events;
  friend bool operator==(const InteractionSequence&,
                         const InteractionSequence&) = default;
};

// `history` holds only events strictly before the target.
struct TrainingExample {
  UserId user = 0;
  std::vector<Event> history;
  Behavior target_behavior = Behavior::kPay;
  ItemId target_item = 0;
};

struct SyntheticCatalog {
  int num_categories = 0;
  std::vector<int> item_category;  // indexed by item id
  ad::Tensor embeddings;           // [num_items, dim]

  std::size_t num_items() const { return item_category.size(); }
  ItemEmbeddingTable embedding_table() const;
};

struct SyntheticOptions {
  int num_users = 2000;
  int num_items = 500;
  int num_categories = 20;
  double conversion_rate = 0.0125;
  int cluster_length = 3;
  double coherence = 1.0;
  std::uint64_t seed = 0;
  int events_per_user = 300;    // mean stream length
  int embedding_dim = 32;
  double stay_probability = 0.8;   // category interest Markov chain
  double noise_probability = 0.5;  // chance of a noise event inside a cluster
  // Chance that the purchased item is one of the cluster items.
  double revisit_probability = 0.5;
};

struct SyntheticDataset {
  SyntheticCatalog catalog;
  std::vector<InteractionSequence> sequences;
};

// Streams of impressions/clicks drifting over category interests, with sparse
// conversions. With probability `coherence` each conversion is preceded by a
// run of `cluster_length` click/add-to-cart events on items of the purchased
// item's category, interleaved with noise events.
SyntheticDataset generate_synthetic(const SyntheticOptions& options);

struct Split {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> valid;
  std::vector<TrainingExample> test;
  std::size_t skipped_users = 0;  // users without a matching target event
};

// Leave-one-out per user over events whose behavior matches `filter` (any
// behavior when nullopt): last match is the test target, second-to-last the
// validation target, the rest are training targets. Histories keep at most
// `max_history` most recent events; examples with empty history are dropped.
Split split_examples(std::span<const InteractionSequence> sequences,
                     std::optional<Behavior> filter, std::size_t max_history);

// Cuts every sequence just before its first held-out `holdout` event (the
// validation target, or the test target for users with a single match) so
// that later stages never train on evaluation targets.
std::vector<InteractionSequence> truncate_before_holdout(
    std::span<const InteractionSequence> sequences, Behavior holdout);

// user \t item \t behavior-code \t timestamp, no header.
std::vector<InteractionSequence> load_tsv(const std::filesystem::path& path);
// Timestamps written as the event's position in its sequence.
void write_tsv(const std::filesystem::path& path,
               std::span<const InteractionSequence> sequences);

// One `{"user":u,"events":[[behavior,item],...]}` object per line.
void write_jsonl(const std::filesystem::path& path,
                 std::span<const InteractionSequence> sequences);
std::vector<InteractionSequence> read_jsonl(const std::filesystem::path& path);

void save_catalog(const std::filesystem::path& path,
                  const SyntheticCatalog& catalog);
SyntheticCatalog load_catalog(const std::filesystem::path& path);

enum class PadPolicy { kLeft, kRight };

// Padded batch. Histories are `width` events wide; each event expands to
// `levels` consecutive token slots carrying its behavior code.
struct Batch {
  std::size_t size = 0;
  std::size_t width = 0;
  int levels = 0;
  PadPolicy pad = PadPolicy::kLeft;
  std::vector<int> history_tokens;        // [size * width * levels]
  std::vector<int> history_behaviors;     // [size * width]
  std::vector<std::uint8_t> mask;         // [size * width], 1 = real event
  std::vector<ItemId> history_items;      // [size * width], -1 = padding
  std::vector<int> lengths;               // real events per row
  std::vector<int> target_tokens;         // [size * levels]
  std::vector<ItemId> target_items;
  std::vector<Behavior> target_behaviors;
  std::vector<UserId> users;

  // Slot index of the row's t-th real event (t = 0 is the oldest).
  std::size_t slot(std::size_t row, std::size_t t) const;
};

// Throws LookupError when an item is not encodable by the tokenizer.
Batch make_batch(std::span<const TrainingExample> examples,
                 const SemanticCodebooks& tokenizer,
                 PadPolicy pad = PadPolicy::kLeft);

// Example order for one epoch, reshuffled from `rng`.
std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng);

}  // namespace revcurr
