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

#include <atomic>
#include <cmath>

#include "revcurr/error.hpp"
#include "revcurr/train.hpp"

namespace revcurr {

namespace {

std::atomic<std::size_t> g_selections{0};

// Per-level token NLLs of a decoder pass whose row r is trained to emit y[r].
class TokenNll {
 public:
  TokenNll(const DecoderLogits& logits, const std::vector<std::vector<int>>& y)
      : logits_(logits) {
    const std::size_t levels = logits.level_logits.size();
    std::vector<std::vector<int>> targets(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      if (logits.level_logits[l]) targets[l].resize(logits.level_logits[l].rows());
    }
    for (std::size_t r = 0; r < y.size(); ++r) {
      for (std::size_t j = 0; j < y[r].size(); ++j) {
        targets[logits.level(r, j)][logits.index(r, j)] = y[r][j];
      }
    }
    per_level_.resize(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      if (logits.level_logits[l]) {
        per_level_[l] = ad::cross_entropy(logits.level_logits[l], targets[l]);
      }
    }
  }

  // Sum over rows and positions of w[r][j] * NLL.
  ad::Var weighted(const std::vector<std::vector<double>>& w) const {
    const std::size_t levels = per_level_.size();
    std::vector<std::vector<double>> weights(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      if (per_level_[l]) weights[l].assign(per_level_[l].rows(), 0.0);
    }
    for (std::size_t r = 0; r < w.size(); ++r) {
      for (std::size_t j = 0; j < w[r].size(); ++j) {
        weights[logits_.level(r, j)][logits_.index(r, j)] = w[r][j];
      }
    }
    ad::Var total;
    for (std::size_t l = 0; l < levels; ++l) {
      if (!per_level_[l]) continue;
      ad::Var term = ad::weighted_sum(per_level_[l], weights[l]);
      total = total ? ad::add(total, term) : term;
    }
    return total;
  }

 private:
  const DecoderLogits& logits_;
  std::vector<ad::Var> per_level_;
};

std::vector<int> target_of(const Batch& batch, std::size_t row) {
  const std::size_t L = static_cast<std::size_t>(batch.levels);
  return {batch.target_tokens.begin() + row * L,
          batch.target_tokens.begin() + (row + 1) * L};
}

void require_rows(const Batch& batch, const char* what) {
  if (batch.size == 0) throw InputError(std::string(what) + ": empty batch");
}

}  // namespace

std::size_t curriculum_selection_count() { return g_selections.load(); }

LossResult loss_pretrain(const ModelParams& params, const ModelConfig& config,
                         const Batch& batch, const ForwardOptions& options) {
  require_rows(batch, "loss_pretrain");
  const EncoderStates states = encode_history(params, config, batch, options);
  const std::size_t B = batch.size;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  std::vector<DecoderRow> rows(B);
  std::vector<std::vector<int>> y(B);
  std::vector<std::vector<double>> w(B);
  for (std::size_t r = 0; r < B; ++r) {
    y[r] = target_of(batch, r);
    rows[r].bos_behavior = batch.target_behaviors[r];
    rows[r].tokens.assign(y[r].begin(), y[r].end() - 1);
    w[r].assign(L, 1.0 / static_cast<double>(B));
  }
  const DecoderLogits logits = decode_forward(params, config, states, rows, options);
  LossResult out;
  out.total = TokenNll(logits, y).weighted(w);
  out.report.examples = B;
  out.report.nll_per_example = out.total.item();
  out.report.l_gr = out.report.nll_per_example / static_cast<double>(L);
  out.report.l_total = out.report.l_gr;
  return out;
}

std::vector<CurriculumPrefix> batch_curricula(const ModelParams& params,
                                              const ModelConfig& config,
                                              const Batch& batch,
                                              const EncoderStates& states,
                                              const SftConfig& sft) {
  const std::size_t B = batch.size, W = batch.width;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  std::vector<CurriculumPrefix> out(B);
  if (sft.mode == CurriculumMode::kNone) return out;
  if (sft.k > config.max_prefix_items) {
    throw ParameterError("curriculum size " + std::to_string(sft.k) +
                         " exceeds the model's max_prefix_items " +
                         std::to_string(config.max_prefix_items));
  }
  ad::Var query;
  if (sft.mode == CurriculumMode::kLearned) {
    query = build_query(params, config, batch.users);
  }
  for (std::size_t r = 0; r < B; ++r) {
    const std::span<const std::uint8_t> valid(batch.mask.data() + r * W, W);
    if (sft.mode == CurriculumMode::kLearned) {
      const ad::Var s = score_relevance(ad::slice_rows(query, r, 1),
                                        states.event_rows(r), valid);
      out[r] = select_curriculum(s, sft.tau, sft.k);
      ++g_selections;
    } else {
      out[r] = recent_curriculum(valid, sft.k);
    }
    for (int t : out[r].indices) {
      const auto* z = batch.history_tokens.data() + (r * W + t) * L;
      out[r].tokens.insert(out[r].tokens.end(), z, z + L);
    }
  }
  return out;
}

ad::Var quality_hinge(const ad::Var& curr, double base, double margin) {
  return ad::relu(ad::add_scalar(curr, margin - base));
}

double baseline_pay_nll(const ModelParams& params, const ModelConfig& config,
                        const Batch& batch) {
  require_rows(batch, "baseline_pay_nll");
  ad::NoGradGuard guard;
  const EncoderStates states = encode_history(params, config, batch);
  const std::size_t B = batch.size;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  std::vector<DecoderRow> rows(B);
  std::vector<std::vector<int>> y(B);
  std::vector<std::vector<double>> w(B);
  for (std::size_t r = 0; r < B; ++r) {
    y[r] = target_of(batch, r);
    rows[r].bos_behavior = Behavior::kPay;
    rows[r].tokens.assign(y[r].begin(), y[r].end() - 1);
    w[r].assign(L, 1.0 / static_cast<double>(B * L));
  }
  const DecoderLogits logits = decode_forward(params, config, states, rows);
  return TokenNll(logits, y).weighted(w).item();
}

LossResult loss_sft(const ModelParams& params, const ModelParams& baseline,
                    const ModelConfig& config, const Batch& batch,
                    const SftConfig& sft, const ForwardOptions& options) {
  if (baseline.vars().empty()) {
    throw PipelineError("loss_sft: frozen baseline parameters are not loaded");
  }
  require_rows(batch, "loss_sft");
  if (sft.margin < 0.0) throw ParameterError("loss_sft: margin must be >= 0");
  const std::size_t B = batch.size;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  for (Behavior b : batch.target_behaviors) {
    if (b != Behavior::kPay) {
      throw InputError("loss_sft: batch contains a non-conversion target");
    }
  }

  const EncoderStates states = encode_history(params, config, batch, options);
  std::vector<CurriculumPrefix> curricula =
      batch_curricula(params, config, batch, states, sft);

  std::vector<DecoderRow> rows(B);
  std::vector<std::vector<int>> y(B);
  std::vector<std::vector<double>> w_sft(B), w_curr(B);
  const double per_target = 1.0 / static_cast<double>(B * L);
  for (std::size_t r = 0; r < B; ++r) {
    const TokenSeq& prefix = curricula[r].tokens;
    y[r] = prefix;
    const auto z = target_of(batch, r);
    y[r].insert(y[r].end(), z.begin(), z.end());
    rows[r].bos_behavior = Behavior::kPay;
    rows[r].tokens.assign(y[r].begin(), y[r].end() - 1);
    rows[r].prefix_length = prefix.size();
    if (sft.mode == CurriculumMode::kLearned && !prefix.empty()) {
      const ad::Var ones = ad::Var::constant(ad::Tensor({prefix.size(), 1}, 1.0));
      rows[r].prefix_scale =
          couple_mask_to_prefix(curricula[r], ones, config.levels);
    }
    const std::size_t n = y[r].size();
    w_curr[r].assign(n, 0.0);
    w_sft[r].assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const bool target = j >= prefix.size();
      if (target) w_curr[r][j] = per_target;
      if (sft.target_only) {
        w_sft[r][j] = target ? per_target : 0.0;
      } else {
        w_sft[r][j] = 1.0 / static_cast<double>(B * n);
      }
    }
  }
  const DecoderLogits logits = decode_forward(params, config, states, rows, options);
  const TokenNll nll(logits, y);
  const ad::Var l_sft = nll.weighted(w_sft);
  const ad::Var l_curr = nll.weighted(w_curr);
  const double base = baseline_pay_nll(baseline, config, batch);
  const ad::Var hinge = quality_hinge(l_curr, base, sft.margin);

  LossResult out;
  out.total = sft.lambda_qual == 0.0
                  ? l_sft
                  : ad::add(l_sft, ad::scale(hinge, sft.lambda_qual));
  out.report.examples = B;
  out.report.l_sft = l_sft.item();
  out.report.l_curr_pay = l_curr.item();
  out.report.l_base_pay = base;
  out.report.l_qual = hinge.item();
  out.report.l_total = out.total.item();
  return out;
}

std::string curriculum_mode_name(CurriculumMode mode) {
  switch (mode) {
    case CurriculumMode::kLearned:
      return "learned";
    case CurriculumMode::kRecent:
      return "recent";
    case CurriculumMode::kNone:
      return "none";
  }
  return "unknown";
}

CurriculumMode curriculum_mode_from_name(const std::string& name) {
  if (name == "learned") return CurriculumMode::kLearned;
  if (name == "recent") return CurriculumMode::kRecent;
  if (name == "none") return CurriculumMode::kNone;
  throw ParameterError("unknown curriculum mode '" + name +
                       "' (expected learned, recent or none)");
}

}  // namespace revcurr
