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
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "revcurr/ad/ops.hpp"
#include "revcurr/data.hpp"
#include "revcurr/tokenizer.hpp"

namespace revcurr {

struct ModelConfig {
  int d = 64;
  int encoder_layers = 2;
  int decoder_layers = 1;
  int heads = 4;
  int levels = 4;
  std::vector<int> vocab_sizes;  // one entry per level
  int behaviors = kNumBehaviors;
  int max_history = 50;          // events
  int max_prefix_items = 6;      // largest curriculum length supported
  int ffn_multiplier = 2;
  double dropout = 0.0;
  int num_users = 0;             // user table gets one extra cold-start row

  // 4-layer encoder, 2-layer decoder, d=256, 8 heads.
  static ModelConfig full_scale();
  static ModelConfig desk_scale();

  // Throws ParameterError on inconsistent settings.
  void validate() const;
  int max_decoder_length() const {
    return 1 + (max_prefix_items + 1) * levels;
  }
  int total_vocab() const;
  int vocab_offset(int level) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named trainable arrays (θ). Ordered by name so iteration is deterministic.
class ModelParams {
 public:
  ModelParams() = default;
  // Normal(0, init_std) weights, zero biases, unit layer-norm gains.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed,
                          double init_std = 0.02);

  const ad::Var& at(const std::string& name) const;
  ad::Var& at(const std::string& name);
  bool contains(const std::string& name) const {
    return vars_.count(name) != 0;
  }
  void set(const std::string& name, ad::Tensor value);
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

  // Deep copy; the clone shares no storage with this object.
  ModelParams clone() const;
  void zero_grad();
  std::size_t parameter_count() const;
  // Parameters used only by curriculum selection (user table W_u and the
  // query MLP); absent from the pretraining objective.
  static bool is_curriculum_param(const std::string& name);
  void reinit_curriculum_params(std::uint64_t seed, double init_std = 0.02);

 private:
  std::map<std::string, ad::Var> vars_;
};

// Output of the encoder over a padded batch.
struct EncoderStates {
  std::size_t batch = 0;
  std::size_t width = 0;  // events per row
  int levels = 0;
  ad::Var token_states;   // [batch * width * levels, d]
  ad::Var event_states;   // [batch * width, d]; mean over each event's tokens
  std::vector<std::uint8_t> token_valid;  // [batch * width * levels]
  std::vector<std::uint8_t> event_valid;  // [batch * width]

  // Rows of one batch element: [width, d].
  ad::Var event_rows(std::size_t row) const;
};

// Selected curriculum for one history. Indices are positions in the score
// row (padded slots included) ordered by ascending relevance.
struct CurriculumPrefix {
  std::vector<int> indices;
  ad::Var relevance;     // p, [1, width]; exactly zero on padded positions
  ad::Tensor hard_mask;  // m_hard, [1, width]
  ad::Var mask;          // m = m_hard - sg(p) + p
  TokenSeq tokens;       // G_prefix, filled by assemble_prefix
};

enum class CurriculumMode { kLearned, kRecent, kNone };

// Per-call knobs; `rng` drives dropout and is ignored when not training.
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

EncoderStates encode_history(const ModelParams& params,
                             const ModelConfig& config, const Batch& batch,
                             const ForwardOptions& options = {});

// q = MLP([W_u x_u ; e_pay]), one row per user: [users.size(), d]. Users
// outside the table use the cold-start row.
ad::Var build_query(const ModelParams& params, const ModelConfig& config,
                    std::span<const UserId> users);

// s_t = q . h_t / sqrt(d); padded positions get -inf. q is [1, d], states
// [width, d]; returns [1, width].
ad::Var score_relevance(const ad::Var& query, const ad::Var& states,
                        std::span<const std::uint8_t> valid);

// p = softmax(s / tau) over finite scores; K = the k largest (ties to the
// smaller index), clamped to the number of valid positions; straight-through
// mask m = m_hard - sg(p) + p.
CurriculumPrefix select_curriculum(const ad::Var& scores, double tau, int k);

// G_prefix = [phi(i_t1); ...; phi(i_tk)] in the curriculum's order.
// `items` is the score row's item per position.
TokenSeq assemble_prefix(const CurriculumPrefix& curriculum,
                         std::span<const ItemId> items,
                         const SemanticCodebooks& tokenizer);

// Scales the prefix token embeddings (levels rows per selected event) by the
// selected entries of m, so their forward value is unchanged while the
// prefix loss reaches p.
ad::Var couple_mask_to_prefix(const CurriculumPrefix& curriculum,
                              const ad::Var& prefix_embeddings, int levels);

// The most recent k valid positions, chronological.
CurriculumPrefix recent_curriculum(std::span<const std::uint8_t> valid, int k);

// One decoder sequence. `tokens` excludes BOS; input position j + 1 carries
// tokens[j] whose level is j mod L. The first `prefix_length` tokens are the
// curriculum prefix. Position embeddings are anchored at the end of the
// prefix, so the target block uses the same positions with or without one.
// The first `prefix_scale` rows (if set) are multiplied by that column vector.
struct DecoderRow {
  Behavior bos_behavior = Behavior::kPay;
  std::vector<int> tokens;
  std::size_t prefix_length = 0;
  ad::Var prefix_scale;  // [prefix_len, 1] or empty
};

// Logits of a decoder pass. Position j of row r predicts the token at input
// position j + 1, from the level (j mod L) vocabulary.
struct DecoderLogits {
  std::size_t batch = 0;
  std::size_t length = 0;             // padded positions per row
  std::vector<std::size_t> row_length;  // real positions per row
  std::vector<ad::Var> level_logits;    // [count_l, vocab_l]
  // (level, row within level_logits) of each (row, position); -1 if padding.
  std::vector<int> level_of;
  std::vector<int> index_in_level;

  int level(std::size_t row, std::size_t pos) const {
    return level_of[row * length + pos];
  }
  int index(std::size_t row, std::size_t pos) const {
    return index_in_level[row * length + pos];
  }
  // Log-softmax of one position's logits.
  std::vector<double> log_probs(std::size_t row, std::size_t pos) const;
};

// Row r cross-attends to encoder row r, or to encoder row state_rows[r] when
// given (beams sharing one history). Throws LengthError when a row exceeds
// max_decoder_length().
DecoderLogits decode_forward(const ModelParams& params,
                             const ModelConfig& config,
                             const EncoderStates& states,
                             const std::vector<DecoderRow>& rows,
                             const ForwardOptions& options = {},
                             std::span<const std::size_t> state_rows = {});

// Named arrays + config + metadata in a versioned binary container. Values
// round-trip bit-exactly.
struct Checkpoint {
  ModelConfig config;
  std::string stage;  // "pretrained" or "sft"
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, ad::Tensor> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

ModelParams params_from_arrays(const std::map<std::string, ad::Tensor>& arrays,
                               const std::string& prefix = "");
void params_to_arrays(const ModelParams& params,
                      std::map<std::string, ad::Tensor>& arrays,
                      const std::string& prefix = "");

// SHA-256 over names, shapes and raw values, hex encoded.
std::string hash_params(const ModelParams& params);

}  // namespace revcurr
