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

#include <cmath>
#include <limits>

#include "json.hpp"
#include "revcurr/error.hpp"
#include "revcurr/train.hpp"

namespace revcurr {

namespace {

void emit(MetricsSink sink, const nlohmann::json& line) {
  if (sink != nullptr) *sink << line.dump() << '\n';
}

// Cycles through a reshuffled order, one epoch after another.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::mt19937_64& rng) : n_(n), rng_(rng) {
    order_ = shuffled_order(n_, rng_);
  }

  std::vector<std::size_t> next(std::size_t size) {
    std::vector<std::size_t> out;
    while (out.size() < size) {
      if (pos_ == order_.size()) {
        order_ = shuffled_order(n_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::mt19937_64& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<TrainingExample> pick(std::span<const TrainingExample> examples,
                                  std::span<const std::size_t> idx) {
  std::vector<TrainingExample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(examples[i]);
  return out;
}

void check_finite(double loss, const char* stage, int step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(stage) + ": non-finite loss at step " +
                          std::to_string(step) +
                          "; lower the learning rate or check the inputs");
  }
}

}  // namespace

double evaluate_pretrain_nll(const ModelParams& params,
                             const ModelConfig& config,
                             std::span<const TrainingExample> examples,
                             const SemanticCodebooks& tokenizer,
                             int batch_size) {
  if (examples.empty()) throw InputError("evaluate_pretrain_nll: no examples");
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const auto chunk = examples.subspan(
        i, std::min<std::size_t>(batch_size, examples.size() - i));
    const Batch batch = make_batch(chunk, tokenizer);
    total += loss_pretrain(params, config, batch).report.nll_per_example *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(examples.size());
}

PretrainResult pretrain(const ModelConfig& config,
                        std::span<const TrainingExample> train,
                        std::span<const TrainingExample> valid,
                        const SemanticCodebooks& tokenizer,
                        const PretrainConfig& pc, std::uint64_t init_seed,
                        MetricsSink metrics) {
  config.validate();
  if (train.empty()) throw InputError("pretrain: no training examples");
  if (pc.batch_size < 1 || pc.max_steps < 1 || pc.eval_every < 1) {
    throw ParameterError("pretrain: batch_size, max_steps, eval_every must be >= 1");
  }
  ModelParams params = ModelParams::init(config, init_seed);
  Adam adam({.learning_rate = pc.learning_rate, .clip_norm = pc.clip_norm});
  std::mt19937_64 shuffle_rng(pc.seed);
  std::mt19937_64 dropout_rng(pc.seed ^ 0x9e3779b97f4a7c15ull);
  BatchCursor cursor(train.size(), shuffle_rng);

  std::vector<TrainingExample> valid_subset(valid.begin(), valid.end());
  if (pc.valid_examples > 0 &&
      valid_subset.size() > static_cast<std::size_t>(pc.valid_examples)) {
    std::mt19937_64 valid_rng(pc.seed + 1);
    const auto order = shuffled_order(valid_subset.size(), valid_rng);
    std::vector<TrainingExample> chosen;
    for (int i = 0; i < pc.valid_examples; ++i) chosen.push_back(valid_subset[order[i]]);
    valid_subset = std::move(chosen);
  }

  PretrainResult result;
  result.best_valid_nll = std::numeric_limits<double>::infinity();
  double window = 0.0;
  int window_steps = 0;
  const std::size_t bs = std::min<std::size_t>(pc.batch_size, train.size());
  for (int step = 1; step <= pc.max_steps; ++step) {
    const auto idx = cursor.next(bs);
    const Batch batch = make_batch(pick(train, idx), tokenizer);
    LossResult loss = loss_pretrain(params, config, batch,
                                    {.training = true, .rng = &dropout_rng});
    check_finite(loss.report.nll_per_example, "pretrain", step);
    if (step == 1) result.initial_train_nll = loss.report.nll_per_example;
    loss.total.backward();
    loss.total = {};
    const double grad_norm = adam.step(params);
    params.zero_grad();
    window += loss.report.nll_per_example;
    ++window_steps;
    emit(metrics, {{"stage", "pretrain"},
                   {"step", step},
                   {"l_gr", loss.report.l_gr},
                   {"l_total", loss.report.l_total},
                   {"grad_norm", grad_norm},
                   {"lr", pc.learning_rate}});

    if (step % pc.eval_every == 0 || step == pc.max_steps) {
      result.final_train_nll = window / window_steps;
      window = 0.0;
      window_steps = 0;
      double v = result.final_train_nll;
      if (!valid_subset.empty()) {
        v = evaluate_pretrain_nll(params, config, valid_subset, tokenizer);
      }
      check_finite(v, "pretrain validation", step);
      emit(metrics, {{"stage", "pretrain-valid"},
                     {"step", step},
                     {"valid_nll", v},
                     {"train_nll", result.final_train_nll}});
      if (v < result.best_valid_nll) {
        result.best_valid_nll = v;
        result.best_step = step;
        result.params = params.clone();
        result.optimizer_state.clear();
        adam.save(result.optimizer_state);
        result.optimizer_steps = adam.steps();
      }
    }
  }
  result.steps = pc.max_steps;
  return result;
}

SftResult sft(const ModelParams& baseline, const ModelConfig& config,
              std::span<const TrainingExample> train,
              const SemanticCodebooks& tokenizer, const SftConfig& sc,
              MetricsSink metrics) {
  if (baseline.vars().empty()) {
    throw PipelineError("sft: pretrained baseline is required");
  }
  if (train.empty()) throw InputError("sft: no conversion examples");
  if (sc.batch_size < 1 || sc.epochs < 1) {
    throw ParameterError("sft: batch_size and epochs must be >= 1");
  }
  SftResult result;
  result.baseline_hash_before = hash_params(baseline);
  result.params = baseline.clone();
  result.params.reinit_curriculum_params(sc.seed + 1);
  Adam adam({.learning_rate = sc.learning_rate, .clip_norm = sc.clip_norm});
  std::mt19937_64 shuffle_rng(sc.seed);
  std::mt19937_64 dropout_rng(sc.seed ^ 0x9e3779b97f4a7c15ull);

  int step = 0;
  const std::size_t bs = static_cast<std::size_t>(sc.batch_size);
  for (int epoch = 0; epoch < sc.epochs; ++epoch) {
    if (sc.max_steps > 0 && step >= sc.max_steps) break;
    const auto order = shuffled_order(train.size(), shuffle_rng);
    SftEpoch summary;
    summary.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < order.size(); i += bs) {
      if (sc.max_steps > 0 && step >= sc.max_steps) break;
      const std::span<const std::size_t> idx(
          order.data() + i, std::min(bs, order.size() - i));
      const Batch batch = make_batch(pick(train, idx), tokenizer);
      LossResult loss = loss_sft(result.params, baseline, config, batch, sc,
                                 {.training = true, .rng = &dropout_rng});
      ++step;
      check_finite(loss.report.l_total, "sft", step);
      loss.total.backward();
      loss.total = {};
      adam.step(result.params);
      result.params.zero_grad();
      const LossReport& r = loss.report;
      const double n = static_cast<double>(r.examples);
      summary.l_sft += r.l_sft * n;
      summary.l_qual += r.l_qual * n;
      summary.l_total += r.l_total * n;
      summary.nll_gain += r.nll_gain() * n;
      seen += r.examples;
      ++summary.steps;
      emit(metrics, {{"stage", "sft"},
                     {"step", step},
                     {"l_sft", r.l_sft},
                     {"l_qual", r.l_qual},
                     {"l_total", r.l_total},
                     {"nll_gain", r.nll_gain()},
                     {"lr", sc.learning_rate}});
    }
    if (seen == 0) break;
    const double n = static_cast<double>(seen);
    summary.l_sft /= n;
    summary.l_qual /= n;
    summary.l_total /= n;
    summary.nll_gain /= n;
    emit(metrics, {{"stage", "sft-epoch"},
                   {"epoch", epoch},
                   {"steps", summary.steps},
                   {"l_sft", summary.l_sft},
                   {"l_qual", summary.l_qual},
                   {"l_total", summary.l_total},
                   {"nll_gain", summary.nll_gain}});
    result.epochs.push_back(summary);
  }
  result.steps = step;
  adam.save(result.optimizer_state);
  result.optimizer_steps = adam.steps();
  result.baseline_hash_after = hash_params(baseline);
  return result;
}

double evaluate_nll_gain(const ModelParams& params, const ModelParams& baseline,
                         const ModelConfig& config,
                         std::span<const TrainingExample> examples,
                         const SemanticCodebooks& tokenizer,
                         const SftConfig& sc, int batch_size) {
  if (examples.empty()) throw InputError("evaluate_nll_gain: no examples");
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const auto chunk = examples.subspan(
        i, std::min<std::size_t>(batch_size, examples.size() - i));
    const Batch batch = make_batch(chunk, tokenizer);
    total += loss_sft(params, baseline, config, batch, sc).report.nll_gain() *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace revcurr
