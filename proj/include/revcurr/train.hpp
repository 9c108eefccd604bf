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
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "revcurr/model.hpp"

namespace revcurr {

// All NLLs in nats per token unless named otherwise.
struct LossReport {
  double l_gr = 0.0;             // pretrain, per token
  double nll_per_example = 0.0;  // pretrain, summed over the L target tokens
  double l_sft = 0.0;
  double l_curr_pay = 0.0;
  double l_base_pay = 0.0;
  double l_qual = 0.0;
  double l_total = 0.0;
  std::size_t examples = 0;

  double nll_gain() const { return l_base_pay - l_curr_pay; }
};

struct LossResult {
  ad::Var total;  // differentiable objective
  LossReport report;
};

// Mean over the batch of the summed target-token NLL with decoder input
// [BOS + e_b ; z]. Throws InputError on an empty batch.
LossResult loss_pretrain(const ModelParams& params, const ModelConfig& config,
                         const Batch& batch, const ForwardOptions& options = {});

struct SftConfig {
  int k = 4;
  double tau = 0.5;
  double lambda_qual = 0.1;
  double margin = 0.05;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 1;
  int max_steps = 0;  // 0 = no cap
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  CurriculumMode mode = CurriculumMode::kLearned;
  bool target_only = false;  // weight only the target tokens in L_SFT
};

// Counts select_curriculum calls made by loss_sft and inference.
std::size_t curriculum_selection_count();

// Curriculum for every row of an encoded batch. Empty prefixes for kNone.
std::vector<CurriculumPrefix> batch_curricula(const ModelParams& params,
                                              const ModelConfig& config,
                                              const Batch& batch,
                                              const EncoderStates& states,
                                              const SftConfig& sft);

// max(0, margin - (base - curr)).
ad::Var quality_hinge(const ad::Var& curr, double base, double margin);

// Mean target-token NLL per token under `params` with no prefix, computed
// without gradient.
double baseline_pay_nll(const ModelParams& params, const ModelConfig& config,
                        const Batch& batch);

// Curriculum-augmented objective L_SFT + lambda * L_qual; gradients reach
// `params` only. Throws PipelineError when `baseline` is empty.
LossResult loss_sft(const ModelParams& params, const ModelParams& baseline,
                    const ModelConfig& config, const Batch& batch,
                    const SftConfig& sft, const ForwardOptions& options = {});

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // One update of every parameter holding a gradient. Returns the global
  // gradient norm before clipping. Gradients are left in place.
  double step(ModelParams& params);

  long steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  void save(std::map<std::string, ad::Tensor>& arrays) const;
  void load(const std::map<std::string, ad::Tensor>& arrays, long steps);

 private:
  AdamOptions options_;
  long steps_ = 0;
  std::map<std::string, ad::Tensor> m_;
  std::map<std::string, ad::Tensor> v_;
};

struct PretrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_steps = 2000;
  int eval_every = 250;
  int valid_examples = 500;  // validation subset size; 0 = all
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

// One JSON object per line; null disables logging.
using MetricsSink = std::ostream*;

struct PretrainResult {
  ModelParams params;  // best validation checkpoint
  double best_valid_nll = 0.0;  // per example
  int best_step = 0;
  double initial_train_nll = 0.0;  // first batch, per example
  double final_train_nll = 0.0;    // mean of the last eval window
  int steps = 0;
  // Adam moments at the best step, for checkpointing.
  std::map<std::string, ad::Tensor> optimizer_state;
  long optimizer_steps = 0;
};

// Mean per-example NLL over `examples` without gradient or dropout.
double evaluate_pretrain_nll(const ModelParams& params,
                             const ModelConfig& config,
                             std::span<const TrainingExample> examples,
                             const SemanticCodebooks& tokenizer,
                             int batch_size = 64);

// Throws DivergenceError on a non-finite loss.
PretrainResult pretrain(const ModelConfig& config,
                        std::span<const TrainingExample> train,
                        std::span<const TrainingExample> valid,
                        const SemanticCodebooks& tokenizer,
                        const PretrainConfig& pretrain_config,
                        std::uint64_t init_seed, MetricsSink metrics = nullptr);

struct SftEpoch {
  int epoch = 0;
  int steps = 0;
  double l_sft = 0.0;
  double l_qual = 0.0;
  double l_total = 0.0;
  double nll_gain = 0.0;  // mean L_base - L_curr
};

struct SftResult {
  ModelParams params;
  std::vector<SftEpoch> epochs;
  std::string baseline_hash_before;
  std::string baseline_hash_after;
  int steps = 0;
  std::map<std::string, ad::Tensor> optimizer_state;  // final Adam moments
  long optimizer_steps = 0;
};

// Starts from a copy of `baseline` with fresh curriculum parameters.
SftResult sft(const ModelParams& baseline, const ModelConfig& config,
              std::span<const TrainingExample> train,
              const SemanticCodebooks& tokenizer, const SftConfig& sft_config,
              MetricsSink metrics = nullptr);

// Mean (L_base - L_curr) over `examples` with gradients and dropout off.
double evaluate_nll_gain(const ModelParams& params, const ModelParams& baseline,
                         const ModelConfig& config,
                         std::span<const TrainingExample> examples,
                         const SemanticCodebooks& tokenizer,
                         const SftConfig& sft, int batch_size = 64);

std::string curriculum_mode_name(CurriculumMode mode);
CurriculumMode curriculum_mode_from_name(const std::string& name);

}  // namespace revcurr
