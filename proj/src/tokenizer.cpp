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

#include "revcurr/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "json.hpp"
#include "revcurr/error.hpp"

namespace revcurr {

namespace {

constexpr const char* kFormat = "revcurr.codebooks";
constexpr int kVersion = 1;

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

int nearest(const ad::Tensor& centroids, const double* point) {
  const std::size_t dim = centroids.cols();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.data() + c * dim, point, dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

ad::Tensor kmeans(const ad::Tensor& points, int k, int iterations,
                  std::uint64_t seed, std::vector<int>& assignment) {
  const std::size_t n = points.rows(), dim = points.cols();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ParameterError("k-means: k=" + std::to_string(k) +
                         " must be in [1, " + std::to_string(n) + "]");
  }
  std::mt19937_64 rng(seed);
  ad::Tensor centroids({static_cast<std::size_t>(k), dim});
  auto set_centroid = [&](std::size_t c, std::size_t p) {
    std::copy_n(points.data() + p * dim, dim, centroids.data() + c * dim);
  };

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  set_centroid(0, pick(rng));
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      dist2[p] = std::min(dist2[p], squared_distance(points.data() + p * dim,
                                                     centroids.data() +
                                                         (c - 1) * dim,
                                                     dim));
      total += dist2[p];
    }
    std::size_t chosen = pick(rng);
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t p = 0; p < n; ++p) {
        if (dist2[p] <= 0.0) continue;
        chosen = p;
        r -= dist2[p];
        if (r <= 0.0) break;
      }
    }
    set_centroid(c, chosen);
  }

  assignment.assign(n, 0);
  auto assign_all = [&] {
    for (std::size_t p = 0; p < n; ++p) {
      assignment[p] = nearest(centroids, points.data() + p * dim);
    }
  };
  assign_all();
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < iterations; ++it) {
    // Empty cluster repair: move the farthest member of the largest cluster.
    for (;;) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int a : assignment) ++counts[a];
      const auto empty = std::find(counts.begin(), counts.end(), 0u);
      if (empty == counts.end()) break;
      const int largest = static_cast<int>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      if (counts[largest] < 2) break;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (assignment[p] != largest) continue;
        const double d = squared_distance(
            points.data() + p * dim, centroids.data() + largest * dim, dim);
        if (d > far_d) {
          far_d = d;
          far = p;
        }
      }
      if (far_d <= 0.0) break;  // only duplicates left; nothing to split
      const int target = static_cast<int>(empty - counts.begin());
      assignment[far] = target;
      set_centroid(target, far);
    }
    centroids.fill(0.0);
    for (std::size_t p = 0; p < n; ++p) {
      double* c = centroids.data() + assignment[p] * dim;
      const double* x = points.data() + p * dim;
      for (std::size_t i = 0; i < dim; ++i) c[i] += x[i];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t i = 0; i < dim; ++i) {
        centroids[c * dim + i] /= static_cast<double>(counts[c]);
      }
    }
    std::vector<int> previous = assignment;
    assign_all();
    if (previous == assignment) break;
  }
  return centroids;
}

SemanticCodebooks SemanticCodebooks::fit(const ItemEmbeddingTable& embeddings,
                                         const TokenizerOptions& options) {
  const std::size_t n = embeddings.size();
  if (n == 0) throw InputError("tokenizer: empty embedding table");
  if (embeddings.vectors.rows() != n) {
    throw InputError("tokenizer: embedding rows do not match item ids");
  }
  if (options.levels < 1) throw ParameterError("tokenizer: levels must be >= 1");
  if (options.codebook_size < 1 ||
      static_cast<std::size_t>(options.codebook_size) > n) {
    throw ParameterError("tokenizer: codebook size " +
                         std::to_string(options.codebook_size) +
                         " exceeds item count " + std::to_string(n));
  }
  if (!embeddings.vectors.all_finite()) {
    throw InputError("tokenizer: non-finite item embedding");
  }

  SemanticCodebooks cb;
  cb.levels_ = options.levels;
  cb.dim_ = embeddings.dim();
  const int semantic = options.levels == 1 ? 1 : options.levels - 1;

  std::vector<TokenSeq> codes(n);
  ad::Tensor residual = embeddings.vectors;
  for (int level = 0; level < semantic; ++level) {
    std::vector<int> assignment;
    ad::Tensor centroids =
        kmeans(residual, options.codebook_size, options.kmeans_iterations,
               options.seed + 7919ULL * static_cast<std::uint64_t>(level),
               assignment);
    const std::size_t dim = cb.dim_;
    for (std::size_t p = 0; p < n; ++p) {
      codes[p].push_back(assignment[p]);
      const double* c = centroids.data() + assignment[p] * dim;
      for (std::size_t i = 0; i < dim; ++i) residual[p * dim + i] -= c[i];
    }
    cb.codebooks_.push_back(std::move(centroids));
    cb.vocab_sizes_.push_back(options.codebook_size);
  }

  if (options.levels > 1) {
    std::map<TokenSeq, int> next_slot;
    int widest = 1;
    for (std::size_t p = 0; p < n; ++p) {
      const int slot = next_slot[codes[p]]++;
      codes[p].push_back(slot);
      widest = std::max(widest, slot + 1);
    }
    cb.vocab_sizes_.push_back(widest);
  }

  for (std::size_t p = 0; p < n; ++p) {
    const ItemId id = embeddings.ids[p];
    if (!cb.item_tokens_.emplace(id, codes[p]).second) {
      throw InputError("tokenizer: duplicate item id " + std::to_string(id));
    }
    if (!cb.token_items_.emplace(codes[p], id).second) {
      throw InputError(
          "tokenizer: single-level codebook cannot separate all items; use "
          "levels >= 2 or a larger codebook");
    }
  }
  return cb;
}

std::vector<ItemId> SemanticCodebooks::items() const {
  std::vector<ItemId> out;
  out.reserve(item_tokens_.size());
  for (const auto& [id, tokens] : item_tokens_) out.push_back(id);
  return out;
}

const TokenSeq& SemanticCodebooks::encode(ItemId item) const {
  auto it = item_tokens_.find(item);
  if (it == item_tokens_.end()) {
    throw LookupError("tokenizer: unknown item " + std::to_string(item));
  }
  return it->second;
}

std::optional<ItemId> SemanticCodebooks::decode(
    std::span<const int> tokens) const {
  if (tokens.size() != static_cast<std::size_t>(levels_)) {
    throw LengthError("tokenizer: expected " + std::to_string(levels_) +
                      " tokens, got " + std::to_string(tokens.size()));
  }
  for (int level = 0; level < levels_; ++level) {
    if (tokens[level] < 0 || tokens[level] >= vocab_sizes_[level]) {
      throw IndexError("tokenizer: token " + std::to_string(tokens[level]) +
                       " outside level " + std::to_string(level) +
                       " vocabulary");
    }
  }
  auto it = token_items_.find(TokenSeq(tokens.begin(), tokens.end()));
  if (it == token_items_.end()) return std::nullopt;
  return it->second;
}

double SemanticCodebooks::reconstruction_mse(
    const ItemEmbeddingTable& embeddings, int levels_used) const {
  const std::size_t dim = dim_;
  const int used = std::min(levels_used, semantic_levels());
  double total = 0.0;
  for (std::size_t p = 0; p < embeddings.size(); ++p) {
    const TokenSeq& tokens = encode(embeddings.ids[p]);
    std::vector<double> r(embeddings.vectors.data() + p * dim,
                          embeddings.vectors.data() + (p + 1) * dim);
    for (int level = 0; level < used; ++level) {
      const double* c = codebooks_[level].data() + tokens[level] * dim;
      for (std::size_t i = 0; i < dim; ++i) r[i] -= c[i];
    }
    for (double v : r) total += v * v;
  }
  return total / static_cast<double>(embeddings.size());
}

void SemanticCodebooks::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["levels"] = levels_;
  j["dim"] = dim_;
  j["vocab_sizes"] = vocab_sizes_;
  j["codebooks"] = nlohmann::json::array();
  for (const ad::Tensor& c : codebooks_) {
    j["codebooks"].push_back({{"rows", c.rows()}, {"values", c.storage()}});
  }
  j["items"] = nlohmann::json::array();
  for (const auto& [id, tokens] : item_tokens_) {
    j["items"].push_back({id, tokens});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump() << '\n';
}

SemanticCodebooks SemanticCodebooks::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read codebooks " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("codebooks " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
    throw InputError("codebooks " + path.string() +
                     ": unsupported format or version");
  }
  SemanticCodebooks cb;
  cb.levels_ = j.at("levels").get<int>();
  cb.dim_ = j.at("dim").get<std::size_t>();
  cb.vocab_sizes_ = j.at("vocab_sizes").get<std::vector<int>>();
  for (const auto& c : j.at("codebooks")) {
    cb.codebooks_.emplace_back(
        ad::Shape{c.at("rows").get<std::size_t>(), cb.dim_},
        c.at("values").get<std::vector<double>>());
  }
  for (const auto& entry : j.at("items")) {
    const ItemId id = entry.at(0).get<ItemId>();
    TokenSeq tokens = entry.at(1).get<TokenSeq>();
    cb.token_items_.emplace(tokens, id);
    cb.item_tokens_.emplace(id, std::move(tokens));
  }
  return cb;
}

bool operator==(const SemanticCodebooks& a, const SemanticCodebooks& b) {
  return a.levels_ == b.levels_ && a.dim_ == b.dim_ &&
         a.vocab_sizes_ == b.vocab_sizes_ && a.codebooks_ == b.codebooks_ &&
         a.item_tokens_ == b.item_tokens_;
}

}  // namespace revcurr
