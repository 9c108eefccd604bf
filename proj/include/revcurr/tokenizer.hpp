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
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "revcurr/ad/tensor.hpp"

namespace revcurr {

using ItemId = std::int32_t;
using TokenSeq = std::vector<int>;

// One embedding row per catalog item.
struct ItemEmbeddingTable {
  std::vector<ItemId> ids;
  ad::Tensor vectors;  // [ids.size(), dim]

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return vectors.cols(); }
};

struct TokenizerOptions {
  int levels = 4;
  int codebook_size = 8;  // centroids per semantic level
  int kmeans_iterations = 25;
  std::uint64_t seed = 0;
};

// Maps items to length-L token sequences. Levels 1..L-1 are residual k-means
// codes; level L enumerates items that share the same semantic prefix, so the
// mapping is injective. With a single level the only level is semantic and
// fitting fails if two items collide.
class SemanticCodebooks {
 public:
  static SemanticCodebooks fit(const ItemEmbeddingTable& embeddings,
                               const TokenizerOptions& options);

  int levels() const { return levels_; }
  std::size_t dim() const { return dim_; }
  const std::vector<int>& vocab_sizes() const { return vocab_sizes_; }
  int vocab_size(int level) const { return vocab_sizes_.at(level); }
  // Centroids of the semantic levels; [vocab, dim] each.
  const std::vector<ad::Tensor>& codebooks() const { return codebooks_; }
  std::size_t num_items() const { return item_tokens_.size(); }
  std::vector<ItemId> items() const;

  // Throws LookupError for an item absent at fit time.
  const TokenSeq& encode(ItemId item) const;
  bool contains(ItemId item) const { return item_tokens_.count(item) != 0; }
  // nullopt when the sequence is not assigned to any item. Throws
  // LengthError on a wrong-length sequence and IndexError on a token outside
  // its level's vocabulary.
  std::optional<ItemId> decode(std::span<const int> tokens) const;

  // Mean squared reconstruction error of the fitted embeddings using the
  // centroids of the first `levels_used` levels (0 = no reconstruction).
  double reconstruction_mse(const ItemEmbeddingTable& embeddings,
                            int levels_used) const;

  void save(const std::filesystem::path& path) const;
  static SemanticCodebooks load(const std::filesystem::path& path);

  friend bool operator==(const SemanticCodebooks& a,
                         const SemanticCodebooks& b);

 private:
  int semantic_levels() const { return static_cast<int>(codebooks_.size()); }

  int levels_ = 0;
  std::size_t dim_ = 0;
  std::vector<int> vocab_sizes_;
  std::vector<ad::Tensor> codebooks_;
  std::map<ItemId, TokenSeq> item_tokens_;
  std::map<TokenSeq, ItemId> token_items_;
};

// Lloyd's k-means with k-means++ seeding. Returns the centroids [k, dim] and
// fills `assignment`. Exposed for testing.
ad::Tensor kmeans(const ad::Tensor& points, int k, int iterations,
                  std::uint64_t seed, std::vector<int>& assignment);

}  // namespace revcurr
