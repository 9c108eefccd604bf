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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "revcurr/train.hpp"

namespace revcurr {

// Prefix tree over the catalog's token sequences.
class TokenTrie {
 public:
  explicit TokenTrie(const SemanticCodebooks& tokenizer);

  static constexpr int kRoot = 0;
  // -1 when no catalog sequence continues with `token`.
  int child(int node, int token) const;
  // (token, child) pairs in ascending token order.
  const std::vector<std::pair<int, int>>& children(int node) const {
    return nodes_.at(node).children;
  }
  // Item at a complete sequence, if any.
  std::optional<ItemId> item(int node) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::pair<int, int>> children;
    ItemId item = -1;
  };
  std::vector<Node> nodes_;
};

struct Candidate {
  ItemId item = 0;
  double log_prob = 0.0;
  TokenSeq tokens;
};

struct Generation {
  std::vector<Candidate> ranked;  // descending log-probability
  bool short_list = false;        // fewer than top_n decodable sequences
};

struct EvalOptions {
  int beam_width = 20;
  int top_n = 10;
  int batch_size = 16;
  bool inference_prefix = true;  // teacher-force the curriculum at inference
  SftConfig curriculum;          // mode, k and tau of the selection
};

// Beam search over the L target positions after [BOS + e_pay ; G_prefix],
// restricted to catalog sequences. Log-probabilities are normalized over the
// full vocabulary of each level. Throws ParameterError if beam_width < top_n.
std::vector<Generation> generate_topn(const ModelParams& params,
                                      const ModelConfig& config,
                                      const TokenTrie& trie,
                                      const Batch& batch,
                                      const EvalOptions& options);

// Single-history convenience wrapper.
Generation generate_topn(const ModelParams& params, const ModelConfig& config,
                         const SemanticCodebooks& tokenizer,
                         const TokenTrie& trie, const TrainingExample& example,
                         const EvalOptions& options);

// 1-based rank of `target` in `ranked`, 0 if absent.
std::size_t rank_of(std::span<const ItemId> ranked, ItemId target);
// Throw ParameterError when k < 1. An empty ranking is a miss.
double recall_at_k(std::span<const ItemId> ranked, ItemId target, int k);
double ndcg_at_k(std::span<const ItemId> ranked, ItemId target, int k);

struct EvalReport {
  double recall5 = 0.0;
  double recall10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::vector<UserId> users;
  std::vector<std::size_t> ranks;  // 0 = not in the top-N list
  std::size_t short_lists = 0;
  std::string fingerprint;  // SHA-256 of parameters and evaluation settings

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& json_path,
             const std::filesystem::path& csv_path) const;
};

EvalReport evaluate(const ModelParams& params, const ModelConfig& config,
                    const SemanticCodebooks& tokenizer,
                    std::span<const TrainingExample> examples,
                    const EvalOptions& options);

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Any of full, no_rcpm, recent_k, no_quality.
  std::vector<std::string> variants{"full", "no_rcpm", "recent_k", "no_quality"};
  std::vector<int> k_sweep{1, 2, 4, 6};
  SftConfig sft;     // the full model's settings
  EvalOptions eval;  // curriculum settings are taken from each variant
  bool measure_train_gain = true;  // for full and no_quality
};

struct AblationRun {
  std::string variant;  // "k=<k>" for sweep entries
  int k = 0;
  std::uint64_t seed = 0;
  EvalReport report;
  std::optional<double> train_gain;  // mean L_base - L_curr after SFT
  double seconds = 0.0;
};

struct AblationSummary {
  std::string variant;
  int k = 0;
  double recall5_mean = 0, recall5_std = 0;
  double recall10_mean = 0, recall10_std = 0;
  double ndcg5_mean = 0, ndcg5_std = 0;
  double ndcg10_mean = 0, ndcg10_std = 0;
  std::optional<double> train_gain_mean;
};

struct AblationTable {
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> summary;  // variants, then the k sweep

  const AblationSummary& find(const std::string& variant) const;
  std::vector<const AblationRun*> runs_of(const std::string& variant) const;
  // ablation.csv, ablation_runs.csv, k_sweep.csv and ablation.json.
  void write(const std::filesystem::path& dir) const;
};

// SFT settings of a named variant derived from the full model's settings.
SftConfig variant_config(const std::string& variant, const SftConfig& full);

// Trains and evaluates every variant and k-sweep entry for each seed, all
// starting from the same frozen baseline. A sweep entry whose k equals the
// full model's k reuses the full run.
AblationTable run_ablations(const ModelParams& baseline,
                            const ModelConfig& config,
                            const SemanticCodebooks& tokenizer,
                            std::span<const TrainingExample> train,
                            std::span<const TrainingExample> test,
                            const AblationConfig& ablation,
                            std::ostream* progress = nullptr);

}  // namespace revcurr
