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
#include <limits>

#include "revcurr/error.hpp"
#include "revcurr/model.hpp"

namespace revcurr {

using ad::Var;

namespace {

Var linear(const ModelParams& p, const std::string& name, const Var& x) {
  return ad::add_bias(ad::matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

Var norm(const ModelParams& p, const std::string& name, const Var& x) {
  return ad::layer_norm(x, p.at(name + ".gamma"), p.at(name + ".beta"));
}

Var maybe_dropout(const Var& x, const ModelConfig& c,
                  const ForwardOptions& opt) {
  if (!opt.training || c.dropout == 0.0 || opt.rng == nullptr) return x;
  return ad::dropout(x, c.dropout, *opt.rng);
}

Var multi_head(const ModelParams& p, const std::string& name, const Var& xq,
               const Var& xkv, const ad::AttentionSpec& spec) {
  const Var q = linear(p, name + ".q", xq);
  const Var k = linear(p, name + ".k", xkv);
  const Var v = linear(p, name + ".v", xkv);
  return linear(p, name + ".o", ad::attention(q, k, v, spec));
}

Var feed_forward(const ModelParams& p, const std::string& name, const Var& x) {
  return linear(p, name + ".ffn2", ad::relu(linear(p, name + ".ffn1", x)));
}

}  // namespace

Var EncoderStates::event_rows(std::size_t row) const {
  if (row >= batch) throw IndexError("event_rows: row out of range");
  return ad::slice_rows(event_states, row * width, width);
}

EncoderStates encode_history(const ModelParams& params,
                             const ModelConfig& config, const Batch& batch,
                             const ForwardOptions& options) {
  if (batch.levels != config.levels) {
    throw DimensionError("encode: batch has " + std::to_string(batch.levels) +
                         " levels, model " + std::to_string(config.levels));
  }
  if (batch.width > static_cast<std::size_t>(config.max_history)) {
    throw LengthError("encode: history width " + std::to_string(batch.width) +
                      " exceeds max " + std::to_string(config.max_history));
  }
  const std::size_t B = batch.size, W = batch.width;
  const std::size_t L = static_cast<std::size_t>(config.levels);
  const std::size_t n = B * W * L;

  std::vector<int> tok(n), beh(n), pos(n, 0);
  EncoderStates out;
  out.batch = B;
  out.width = W;
  out.levels = config.levels;
  out.token_valid.assign(n, 0);
  out.event_valid = batch.mask;
  for (std::size_t r = 0; r < B; ++r) {
    const std::size_t len = static_cast<std::size_t>(batch.lengths[r]);
    for (std::size_t s = 0; s < W; ++s) {
      const std::size_t e = r * W + s;
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t i = e * L + l;
        const int t = batch.history_tokens[i];
        if (t < 0 || t >= config.vocab_sizes[l]) {
          throw IndexError("encode: token " + std::to_string(t) +
                           " outside level " + std::to_string(l) + " vocab");
        }
        tok[i] = config.vocab_offset(static_cast<int>(l)) + t;
        beh[i] = batch.history_behaviors[e];
        out.token_valid[i] = batch.mask[e];
      }
    }
    // Positions count back from the most recent real event.
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t s = batch.slot(r, t);
      const std::size_t base = static_cast<std::size_t>(config.max_history) - len + t;
      for (std::size_t l = 0; l < L; ++l) {
        pos[(r * W + s) * L + l] = static_cast<int>(base * L + l);
      }
    }
  }

  Var x = ad::add(ad::add(ad::gather_rows(params.at("tok_emb"), tok),
                          ad::gather_rows(params.at("beh_emb"), beh)),
                  ad::gather_rows(params.at("enc_pos"), pos));
  x = maybe_dropout(x, config, options);
  const ad::AttentionSpec spec{.batch = B,
                               .heads = static_cast<std::size_t>(config.heads),
                               .key_valid = out.token_valid,
                               .causal = false};
  for (int i = 0; i < config.encoder_layers; ++i) {
    const std::string p = "enc" + std::to_string(i);
    const Var a = norm(params, p + ".ln1", x);
    x = ad::add(x, maybe_dropout(multi_head(params, p + ".attn", a, a, spec),
                                 config, options));
    const Var f = norm(params, p + ".ln2", x);
    x = ad::add(x, maybe_dropout(feed_forward(params, p, f), config, options));
  }
  out.token_states = norm(params, "enc.lnf", x);
  out.event_states = ad::segment_mean(out.token_states, L);
  return out;
}

Var build_query(const ModelParams& params, const ModelConfig& config,
                std::span<const UserId> users) {
  if (users.empty()) throw InputError("build_query: no users");
  std::vector<int> rows(users.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    rows[i] = users[i] >= 0 && users[i] < config.num_users ? users[i]
                                                           : config.num_users;
  }
  const std::vector<int> pay(users.size(), behavior_code(Behavior::kPay));
  const Var e_u = ad::gather_rows(params.at("rcpm.user"), rows);
  const Var e_pay = ad::gather_rows(params.at("beh_emb"), pay);
  const Var h = ad::relu(linear(params, "rcpm.mlp1", ad::concat({e_u, e_pay}, 1)));
  return linear(params, "rcpm.mlp2", h);
}

Var score_relevance(const Var& query, const Var& states,
                    std::span<const std::uint8_t> valid) {
  if (query.rows() != 1 || query.cols() != states.cols()) {
    throw DimensionError("score_relevance: query " +
                         ad::shape_string(query.shape()) + " vs states " +
                         ad::shape_string(states.shape()));
  }
  if (!valid.empty() && valid.size() != states.rows()) {
    throw DimensionError("score_relevance: mask length mismatch");
  }
  Var s = ad::scale(ad::matmul(query, ad::transpose(states)),
                    1.0 / std::sqrt(static_cast<double>(states.cols())));
  if (!valid.empty() &&
      std::find(valid.begin(), valid.end(), 0) != valid.end()) {
    s = ad::apply_mask(s, valid);
  }
  return s;
}

CurriculumPrefix select_curriculum(const Var& scores, double tau, int k) {
  if (!(tau > 0.0)) throw ParameterError("select_curriculum: tau must be > 0");
  if (k < 1) throw ParameterError("select_curriculum: k must be >= 1");
  if (scores.rows() != 1) {
    throw DimensionError("select_curriculum: scores must be one row");
  }
  CurriculumPrefix c;
  c.relevance = ad::softmax_rows(scores, tau);
  const std::size_t W = scores.cols();
  const auto& s = scores.value();
  const auto& p = c.relevance.value();
  std::vector<int> valid;
  for (std::size_t t = 0; t < W; ++t) {
    if (std::isfinite(s[t])) valid.push_back(static_cast<int>(t));
  }
  if (valid.empty()) throw InputError("select_curriculum: no valid positions");
  // Rank on the scores: the same order as p, without softmax rounding ties.
  std::stable_sort(valid.begin(), valid.end(),
                   [&](int a, int b) { return s[a] > s[b]; });
  valid.resize(std::min<std::size_t>(valid.size(), static_cast<std::size_t>(k)));
  // Ascending relevance; equal relevance keeps chronological order.
  std::stable_sort(valid.begin(), valid.end());
  std::stable_sort(valid.begin(), valid.end(),
                   [&](int a, int b) { return p[a] < p[b]; });
  c.indices = std::move(valid);
  c.hard_mask = ad::Tensor({1, W});
  for (int t : c.indices) c.hard_mask[t] = 1.0;
  c.mask = ad::straight_through(c.hard_mask, c.relevance);
  return c;
}

CurriculumPrefix recent_curriculum(std::span<const std::uint8_t> valid, int k) {
  if (k < 1) throw ParameterError("recent_curriculum: k must be >= 1");
  CurriculumPrefix c;
  const std::size_t W = valid.size();
  for (std::size_t t = W; t-- > 0;) {
    if (valid[t] && static_cast<int>(c.indices.size()) < k) {
      c.indices.push_back(static_cast<int>(t));
    }
  }
  std::reverse(c.indices.begin(), c.indices.end());
  c.hard_mask = ad::Tensor({1, std::max<std::size_t>(W, 1)});
  for (int t : c.indices) c.hard_mask[t] = 1.0;
  return c;
}

TokenSeq assemble_prefix(const CurriculumPrefix& curriculum,
                         std::span<const ItemId> items,
                         const SemanticCodebooks& tokenizer) {
  TokenSeq out;
  out.reserve(curriculum.indices.size() * tokenizer.levels());
  for (int t : curriculum.indices) {
    if (t < 0 || static_cast<std::size_t>(t) >= items.size()) {
      throw IndexError("assemble_prefix: index " + std::to_string(t));
    }
    const TokenSeq& z = tokenizer.encode(items[t]);
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

Var couple_mask_to_prefix(const CurriculumPrefix& curriculum,
                          const Var& prefix_embeddings, int levels) {
  const std::size_t L = static_cast<std::size_t>(levels);
  if (prefix_embeddings.rows() != curriculum.indices.size() * L) {
    throw DimensionError("couple_mask_to_prefix: expected " +
                         std::to_string(curriculum.indices.size() * L) +
                         " prefix rows");
  }
  if (!curriculum.mask) return prefix_embeddings;
  std::vector<int> rows;
  for (int t : curriculum.indices) rows.insert(rows.end(), L, t);
  const Var column = ad::transpose(curriculum.mask);  // [width, 1]
  return ad::scale_rows(prefix_embeddings, ad::gather_rows(column, rows));
}

std::vector<double> DecoderLogits::log_probs(std::size_t row,
                                             std::size_t pos) const {
  const int l = level(row, pos);
  if (l < 0) throw IndexError("log_probs: padded position");
  const ad::Tensor& logits = level_logits[l].value();
  const std::size_t V = logits.cols();
  const double* z = logits.data() + static_cast<std::size_t>(index(row, pos)) * V;
  const double mx = *std::max_element(z, z + V);
  double total = 0.0;
  for (std::size_t v = 0; v < V; ++v) total += std::exp(z[v] - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(V);
  for (std::size_t v = 0; v < V; ++v) out[v] = z[v] - lse;
  return out;
}

DecoderLogits decode_forward(const ModelParams& params,
                             const ModelConfig& config,
                             const EncoderStates& states,
                             const std::vector<DecoderRow>& rows,
                             const ForwardOptions& options,
                             std::span<const std::size_t> state_rows) {
  if (!state_rows.empty()) {
    if (state_rows.size() != rows.size()) {
      throw DimensionError("decode: state_rows needs one entry per row");
    }
  } else if (rows.size() != states.batch) {
    throw DimensionError("decode: " + std::to_string(rows.size()) +
                         " rows for batch " + std::to_string(states.batch));
  }
  const std::size_t B = rows.size();
  const std::size_t L = static_cast<std::size_t>(config.levels);
  DecoderLogits out;
  out.batch = B;
  // Input position that predicts the first target token.
  const std::size_t anchor =
      static_cast<std::size_t>(config.max_prefix_items) * L;
  for (const DecoderRow& r : rows) {
    const std::size_t len = r.tokens.size() + 1;
    if (r.prefix_length > r.tokens.size()) {
      throw DimensionError("decode: prefix_length exceeds the row's tokens");
    }
    if (r.prefix_length > anchor ||
        anchor - r.prefix_length + len >
            static_cast<std::size_t>(config.max_decoder_length())) {
      throw LengthError("decode: input of " + std::to_string(len) + " with a " +
                        std::to_string(r.prefix_length) +
                        "-token prefix exceeds max length " +
                        std::to_string(config.max_decoder_length()));
    }
    out.length = std::max(out.length, len);
    out.row_length.push_back(len);
  }
  const std::size_t n = out.length;

  // Token rows (index 0 for BOS and padding), BOS indicator and scales.
  std::vector<int> tok(B * n, 0), beh(B * n, 0), pos(B * n);
  std::vector<double> bos_flag(B * n, 0.0);
  std::vector<Var> scale_parts;
  for (std::size_t r = 0; r < B; ++r) {
    const DecoderRow& row = rows[r];
    bos_flag[r * n] = 1.0;
    const std::size_t first = anchor - row.prefix_length;
    for (std::size_t j = 0; j < n; ++j) {
      // Padding positions past the row end reuse the last valid slot.
      pos[r * n + j] = static_cast<int>(first + std::min(j, out.row_length[r] - 1));
      beh[r * n + j] = behavior_code(row.bos_behavior);
    }
    for (std::size_t j = 0; j < row.tokens.size(); ++j) {
      const int l = static_cast<int>(j % L);
      const int t = row.tokens[j];
      if (t < 0 || t >= config.vocab_sizes[l]) {
        throw IndexError("decode: token " + std::to_string(t) +
                         " outside level " + std::to_string(l) + " vocab");
      }
      tok[r * n + j + 1] = config.vocab_offset(l) + t;
    }
    std::size_t scaled = 0;
    scale_parts.push_back(ad::Var::constant(ad::Tensor({1, 1}, 0.0)));
    if (row.prefix_scale) {
      scaled = row.prefix_scale.rows();
      if (scaled > row.tokens.size() || row.prefix_scale.cols() != 1) {
        throw DimensionError("decode: prefix scale longer than the input");
      }
      scale_parts.push_back(row.prefix_scale);
    }
    if (n - 1 - scaled > 0) {
      scale_parts.push_back(ad::Var::constant(ad::Tensor({n - 1 - scaled, 1}, 1.0)));
    }
  }
  const Var tok_scale = ad::concat(scale_parts, 0);
  const Var bos_rows = ad::add_bias(ad::gather_rows(params.at("beh_emb"), beh),
                                    params.at("bos"));
  Var x = ad::add(
      ad::add(ad::scale_rows(ad::gather_rows(params.at("tok_emb"), tok), tok_scale),
              ad::scale_rows(bos_rows,
                             ad::Var::constant(ad::Tensor({B * n, 1}, bos_flag)))),
      ad::gather_rows(params.at("dec_pos"), pos));
  x = maybe_dropout(x, config, options);

  const std::size_t H = static_cast<std::size_t>(config.heads);
  const ad::AttentionSpec self_spec{.batch = B, .heads = H, .causal = true};
  const ad::AttentionSpec cross_spec{.batch = B,
                                     .heads = H,
                                     .key_valid = states.token_valid,
                                     .causal = false,
                                     .key_block = state_rows,
                                     .key_blocks = states.batch};
  for (int i = 0; i < config.decoder_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    const Var a = norm(params, p + ".ln1", x);
    x = ad::add(x, maybe_dropout(multi_head(params, p + ".self", a, a, self_spec),
                                 config, options));
    const Var c = norm(params, p + ".ln2", x);
    x = ad::add(x, maybe_dropout(multi_head(params, p + ".cross", c,
                                            states.token_states, cross_spec),
                                 config, options));
    const Var f = norm(params, p + ".ln3", x);
    x = ad::add(x, maybe_dropout(feed_forward(params, p, f), config, options));
  }
  x = norm(params, "dec.lnf", x);

  std::vector<std::vector<int>> picks(L);
  out.level_of.assign(B * n, -1);
  out.index_in_level.assign(B * n, -1);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t j = 0; j < out.row_length[r]; ++j) {
      const std::size_t l = j % L;
      out.level_of[r * n + j] = static_cast<int>(l);
      out.index_in_level[r * n + j] = static_cast<int>(picks[l].size());
      picks[l].push_back(static_cast<int>(r * n + j));
    }
  }
  out.level_logits.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (picks[l].empty()) continue;
    out.level_logits[l] = linear(params, "head" + std::to_string(l),
                                 ad::gather_rows(x, picks[l]));
  }
  return out;
}

}  // namespace revcurr
