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
#include <fstream>
#include <iomanip>

#include <openssl/evp.h>

#include "revcurr/error.hpp"
#include "revcurr/eval.hpp"

namespace revcurr {

TokenTrie::TokenTrie(const SemanticCodebooks& tokenizer) {
  nodes_.emplace_back();
  for (ItemId item : tokenizer.items()) {
    int node = kRoot;
    for (int token : tokenizer.encode(item)) {
      int next = child(node, token);
      if (next < 0) {
        next = static_cast<int>(nodes_.size());
        auto& kids = nodes_[node].children;
        kids.insert(std::lower_bound(kids.begin(), kids.end(),
                                     std::make_pair(token, 0)),
                    {token, next});
        nodes_.emplace_back();
      }
      node = next;
    }
    nodes_[node].item = item;
  }
}

int TokenTrie::child(int node, int token) const {
  const auto& kids = nodes_.at(node).children;
  auto it = std::lower_bound(kids.begin(), kids.end(), std::make_pair(token, 0));
  return it != kids.end() && it->first == token ? it->second : -1;
}

std::optional<ItemId> TokenTrie::item(int node) const {
  const ItemId i = nodes_.at(node).item;
  if (i < 0) return std::nullopt;
  return i;
}

namespace {

struct Beam {
  TokenSeq tokens;
  double log_prob = 0.0;
  int node = TokenTrie::kRoot;
};

// Higher log-probability first; ties by token sequence for a stable order.
bool beam_before(const Beam& a, const Beam& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Generation> generate_topn(const ModelParams& params,
                                      const ModelConfig& config,
                                      const TokenTrie& trie,
                                      const Batch& batch,
                                      const EvalOptions& options) {
  if (options.top_n < 1) throw ParameterError("generate_topn: top_n must be >= 1");
  if (options.beam_width < options.top_n) {
    throw ParameterError("generate_topn: beam_width must be >= top_n");
  }
  ad::NoGradGuard guard;
  const std::size_t B = batch.size;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  const EncoderStates states = encode_history(params, config, batch);
  std::vector<TokenSeq> prefix(B);
  if (options.inference_prefix &&
      options.curriculum.mode != CurriculumMode::kNone) {
    auto curricula =
        batch_curricula(params, config, batch, states, options.curriculum);
    for (std::size_t r = 0; r < B; ++r) prefix[r] = std::move(curricula[r].tokens);
  }

  std::vector<std::vector<Beam>> beams(B, std::vector<Beam>(1));
  for (std::size_t step = 0; step < L; ++step) {
    std::vector<DecoderRow> rows;
    std::vector<std::size_t> owner;
    for (std::size_t r = 0; r < B; ++r) {
      for (const Beam& beam : beams[r]) {
        DecoderRow row;
        row.tokens = prefix[r];
        row.prefix_length = prefix[r].size();
        row.tokens.insert(row.tokens.end(), beam.tokens.begin(), beam.tokens.end());
        rows.push_back(std::move(row));
        owner.push_back(r);
      }
    }
    const DecoderLogits logits =
        decode_forward(params, config, states, rows, {}, owner);
    std::size_t i = 0;
    for (std::size_t r = 0; r < B; ++r) {
      std::vector<Beam> next;
      for (const Beam& beam : beams[r]) {
        const auto lp = logits.log_probs(i++, prefix[r].size() + step);
        for (const auto& [token, child] : trie.children(beam.node)) {
          Beam b{beam.tokens, beam.log_prob + lp[token], child};
          b.tokens.push_back(token);
          next.push_back(std::move(b));
        }
      }
      const std::size_t keep =
          std::min(next.size(), static_cast<std::size_t>(options.beam_width));
      std::partial_sort(next.begin(), next.begin() + keep, next.end(), beam_before);
      next.resize(keep);
      beams[r] = std::move(next);
    }
  }

  std::vector<Generation> out(B);
  for (std::size_t r = 0; r < B; ++r) {
    for (const Beam& beam : beams[r]) {
      if (auto item = trie.item(beam.node)) {
        out[r].ranked.push_back({*item, beam.log_prob, beam.tokens});
      }
      if (out[r].ranked.size() == static_cast<std::size_t>(options.top_n)) break;
    }
    out[r].short_list = out[r].ranked.size() < static_cast<std::size_t>(options.top_n);
  }
  return out;
}

Generation generate_topn(const ModelParams& params, const ModelConfig& config,
                         const SemanticCodebooks& tokenizer,
                         const TokenTrie& trie, const TrainingExample& example,
                         const EvalOptions& options) {
  const Batch batch = make_batch(std::span(&example, 1), tokenizer);
  return generate_topn(params, config, trie, batch, options).front();
}

std::size_t rank_of(std::span<const ItemId> ranked, ItemId target) {
  auto it = std::find(ranked.begin(), ranked.end(), target);
  return it == ranked.end() ? 0 : static_cast<std::size_t>(it - ranked.begin()) + 1;
}

double recall_at_k(std::span<const ItemId> ranked, ItemId target, int k) {
  if (k < 1) throw ParameterError("recall_at_k: k must be >= 1");
  const std::size_t rank = rank_of(ranked, target);
  return rank >= 1 && rank <= static_cast<std::size_t>(k) ? 1.0 : 0.0;
}

double ndcg_at_k(std::span<const ItemId> ranked, ItemId target, int k) {
  if (k < 1) throw ParameterError("ndcg_at_k: k must be >= 1");
  const std::size_t rank = rank_of(ranked, target);
  if (rank == 0 || rank > static_cast<std::size_t>(k)) return 0.0;
  return 1.0 / std::log2(1.0 + static_cast<double>(rank));
}

nlohmann::json EvalReport::to_json() const {
  return {{"recall@5", recall5},   {"recall@10", recall10},
          {"ndcg@5", ndcg5},       {"ndcg@10", ndcg10},
          {"users", users},        {"ranks", ranks},
          {"short_lists", short_lists}, {"fingerprint", fingerprint}};
}

void EvalReport::write(const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path) const {
  {
    std::ofstream out(json_path);
    if (!out) throw InputError("cannot write " + json_path.string());
    out << to_json().dump(2) << '\n';
  }
  std::ofstream out(csv_path);
  if (!out) throw InputError("cannot write " + csv_path.string());
  out << std::setprecision(17);
  out << "metric,value\n"
      << "recall@5," << recall5 << "\nrecall@10," << recall10 << "\nndcg@5,"
      << ndcg5 << "\nndcg@10," << ndcg10 << "\nusers," << users.size()
      << "\nshort_lists," << short_lists << '\n';
}

namespace {

std::string fingerprint_of(const ModelParams& params, const ModelConfig& config,
                           const EvalOptions& options, std::size_t examples) {
  const nlohmann::json settings{
      {"params", hash_params(params)},
      {"model", config.to_json()},
      {"beam_width", options.beam_width},
      {"top_n", options.top_n},
      {"inference_prefix", options.inference_prefix},
      {"mode", curriculum_mode_name(options.curriculum.mode)},
      {"k", options.curriculum.k},
      {"tau", options.curriculum.tau},
      {"examples", examples}};
  const std::string text = settings.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  static const char* kHex = "0123456789abcdef";
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const ModelConfig& config,
                    const SemanticCodebooks& tokenizer,
                    std::span<const TrainingExample> examples,
                    const EvalOptions& options) {
  if (examples.empty()) throw InputError("evaluate: no examples");
  if (options.batch_size < 1) throw ParameterError("evaluate: batch_size must be >= 1");
  const TokenTrie trie(tokenizer);
  EvalReport report;
  for (std::size_t i = 0; i < examples.size(); i += options.batch_size) {
    const auto chunk = examples.subspan(
        i, std::min<std::size_t>(options.batch_size, examples.size() - i));
    const Batch batch = make_batch(chunk, tokenizer);
    const auto generations = generate_topn(params, config, trie, batch, options);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      std::vector<ItemId> ranked;
      for (const Candidate& c : generations[r].ranked) ranked.push_back(c.item);
      const ItemId target = chunk[r].target_item;
      report.recall5 += recall_at_k(ranked, target, 5);
      report.recall10 += recall_at_k(ranked, target, 10);
      report.ndcg5 += ndcg_at_k(ranked, target, 5);
      report.ndcg10 += ndcg_at_k(ranked, target, 10);
      report.users.push_back(chunk[r].user);
      report.ranks.push_back(rank_of(ranked, target));
      report.short_lists += generations[r].short_list;
    }
  }
  const double n = static_cast<double>(examples.size());
  report.recall5 /= n;
  report.recall10 /= n;
  report.ndcg5 /= n;
  report.ndcg10 /= n;
  report.fingerprint = fingerprint_of(params, config, options, examples.size());
  return report;
}

}  // namespace revcurr
