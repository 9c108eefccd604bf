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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Criteria can be selected by number on the command
// line; with no arguments all of them run.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "../support/tiny_model.hpp"
#include "revcurr/cli.hpp"
#include "revcurr/error.hpp"
#include "revcurr/eval.hpp"

namespace {

using namespace revcurr;
using ad::Shape;
using ad::Tensor;
using ad::Var;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1

Outcome gradients() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto check = [&](const std::string& name,
                   const std::function<Var(const std::vector<Var>&)>& f,
                   std::vector<Var> in) {
    const auto r = testing::grad_check(f, std::move(in));
    checked += r.checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  };
  auto p = [&](Shape s) { return Var::parameter(testing::random_tensor(std::move(s), rng)); };
  auto w = [&](std::size_t n) { return testing::random_weights(n, rng); };
  const auto w12 = w(12), w8 = w(8), w6 = w(6), w4 = w(4), w3 = w(3), w2 = w(2);
  using V = std::vector<Var>;

  check("matmul", [&](const V& in) { return ad::weighted_sum(ad::matmul(in[0], in[1]), w6); },
        {p({3, 4}), p({4, 2})});
  check("transpose", [&](const V& in) { return ad::weighted_sum(ad::transpose(in[0]), w12); },
        {p({3, 4})});
  check("add", [&](const V& in) { return ad::weighted_sum(ad::add(in[0], in[1]), w12); },
        {p({3, 4}), p({3, 4})});
  check("sub", [&](const V& in) { return ad::weighted_sum(ad::sub(in[0], in[1]), w12); },
        {p({3, 4}), p({3, 4})});
  check("mul", [&](const V& in) { return ad::weighted_sum(ad::mul(in[0], in[1]), w12); },
        {p({3, 4}), p({3, 4})});
  check("scale", [&](const V& in) { return ad::weighted_sum(ad::scale(in[0], -1.7), w12); },
        {p({3, 4})});
  check("add_scalar",
        [&](const V& in) { return ad::sum(ad::mul(ad::add_scalar(in[0], 0.3), in[0])); },
        {p({3, 4})});
  check("add_bias", [&](const V& in) { return ad::weighted_sum(ad::add_bias(in[0], in[1]), w12); },
        {p({3, 4}), p({1, 4})});
  check("scale_rows",
        [&](const V& in) { return ad::weighted_sum(ad::scale_rows(in[0], in[1]), w12); },
        {p({3, 4}), p({3, 1})});
  check("relu", [&](const V& in) { return ad::weighted_sum(ad::relu(in[0]), w12); },
        {p({3, 4})});
  check("dropout",
        [&](const V& in) {
          std::mt19937_64 mask_rng(7);  // same mask on every evaluation
          return ad::weighted_sum(ad::dropout(in[0], 0.3, mask_rng), w12);
        },
        {p({3, 4})});
  check("layer_norm",
        [&](const V& in) { return ad::weighted_sum(ad::layer_norm(in[0], in[1], in[2]), w12); },
        {p({3, 4}), p({1, 4}), p({1, 4})});
  const int ids[] = {2, 0, 2};
  check("gather_rows",
        [&](const V& in) { return ad::weighted_sum(ad::gather_rows(in[0], ids), w6); },
        {p({4, 2})});
  check("slice_rows",
        [&](const V& in) { return ad::weighted_sum(ad::slice_rows(in[0], 1, 2), w8); },
        {p({3, 4})});
  check("concat",
        [&](const V& in) {
          return ad::add(ad::weighted_sum(ad::concat({in[0], in[1]}, 0), w12),
                         ad::weighted_sum(ad::concat({in[2], in[0]}, 1), w8));
        },
        {p({1, 4}), p({2, 4}), p({1, 4})});
  check("sum", [&](const V& in) { return ad::sum(ad::mul(in[0], in[0])); }, {p({3, 4})});
  check("mean", [&](const V& in) { return ad::mean(ad::mul(in[0], in[0])); }, {p({3, 4})});
  check("segment_mean",
        [&](const V& in) { return ad::weighted_sum(ad::segment_mean(in[0], 2), w4); },
        {p({4, 2})});
  check("softmax_rows",
        [&](const V& in) { return ad::weighted_sum(ad::softmax_rows(in[0], 0.5), w12); },
        {p({3, 4})});
  const std::uint8_t allowed[] = {1, 0, 1};
  check("apply_mask",
        [&](const V& in) {
          return ad::weighted_sum(ad::softmax_rows(ad::apply_mask(in[0], allowed), 0.7), w3);
        },
        {p({1, 3})});
  const int targets[] = {3, 0};
  check("cross_entropy",
        [&](const V& in) { return ad::weighted_sum(ad::cross_entropy(in[0], targets), w2); },
        {p({2, 4})});

  const std::uint8_t key_valid[] = {0, 1, 1, 1, 1, 1, 0, 1};
  for (bool causal : {false, true}) {
    for (bool masked : {false, true}) {
      ad::AttentionSpec spec{.batch = 2, .heads = 2, .causal = causal};
      if (masked) spec.key_valid = key_valid;
      const auto wa = w(32);
      check("attention",
            [&](const V& in) {
              return ad::weighted_sum(ad::attention(in[0], in[1], in[2], spec), wa);
            },
            {p({8, 4}), p({8, 4}), p({8, 4})});
    }
  }
  // Four query blocks reading two shared key blocks.
  const std::size_t key_block[] = {0, 1, 1, 0};
  ad::AttentionSpec shared{.batch = 4, .heads = 2, .key_block = key_block, .key_blocks = 2};
  const auto ws = w(24);
  check("attention(shared keys)",
        [&](const V& in) {
          return ad::weighted_sum(ad::attention(in[0], in[1], in[2], shared), ws);
        },
        {p({12, 2}), p({6, 2}), p({6, 2})});

  // The two surrogate-gradient ops are held to their defined backward rules:
  // zero for stop_gradient, identity for straight_through.
  bool surrogate_ok = true;
  {
    auto x = p({2, 3});
    auto y = p({2, 3});
    ad::add(ad::sum(ad::mul(ad::stop_gradient(x), y)), ad::weighted_sum(x, w6)).backward();
    for (std::size_t i = 0; i < 6; ++i) surrogate_ok &= x.grad()[i] == w6[i];
    auto soft = p({1, 6});
    Tensor hard({1, 6});
    hard[1] = hard[4] = 1.0;
    ad::weighted_sum(ad::straight_through(hard, soft), w6).backward();
    for (std::size_t i = 0; i < 6; ++i) surrogate_ok &= soft.grad()[i] == w6[i];
  }

  // Whole tiny model: encoder, query, relevance, selection and decoder.
  const ModelConfig c = testing::tiny_config();
  const ModelParams params = ModelParams::init(c, 3, 0.4);
  const Batch batch = testing::random_batch(c, {4, 3}, 9);
  const auto wm = testing::random_weights(batch.width, rng);
  std::vector<Var> inputs;
  for (const auto& [name, var] : params.vars()) inputs.push_back(var);
  check("tiny model",
        [&](const V&) { return testing::tiny_objective(params, c, batch, wm); }, inputs);

  return {worst < 1e-4 && surrogate_ok,
          "max rel error " + fmt(worst) + " (" + worst_name + ") over " +
              std::to_string(checked) + " entries; surrogate rules " +
              (surrogate_ok ? "exact" : "WRONG")};
}

// ---------------------------------------------------------------- 2

// Rows of d(out)/d(scores), one backward pass per output entry.
std::vector<std::vector<double>> jacobian(const Var& out, const Var& scores) {
  std::vector<std::vector<double>> j;
  for (std::size_t i = 0; i < out.value().size(); ++i) {
    const_cast<Var&>(scores).zero_grad();
    Tensor seed(out.shape());
    seed[i] = 1.0;
    out.backward(seed);
    std::vector<double> row(scores.value().size(), 0.0);
    if (scores.has_grad()) {
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = scores.grad()[c];
    }
    j.push_back(std::move(row));
  }
  return j;
}

Outcome straight_through_contract() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> width_dist(1, 16);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int value_failures = 0;
  int selection_failures = 0;
  double jac_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = width_dist(rng);
    const int k = std::uniform_int_distribution<int>(1, n + 2)(rng);
    const double tau = 0.1 + 1.9 * unit(rng);
    Tensor s({1, static_cast<std::size_t>(n)});
    int valid = 0;
    for (int i = 0; i < n; ++i) {
      const bool pad = unit(rng) < 0.2 && i + 1 < n;
      s[i] = pad ? -std::numeric_limits<double>::infinity() : normal(rng);
      valid += pad ? 0 : 1;
    }
    Var scores = Var::parameter(s);
    const CurriculumPrefix cur = select_curriculum(scores, tau, k);

    // Forward value is m_hard bit for bit, and m_hard marks the top-k of p.
    if (!(cur.mask.value() == cur.hard_mask)) ++value_failures;
    const auto& p = cur.relevance.value();
    const std::size_t expect = std::min(k, valid);
    std::set<int> chosen(cur.indices.begin(), cur.indices.end());
    bool ok = chosen.size() == expect && cur.indices.size() == expect;
    double min_in = 2.0, max_out = -1.0;
    for (int i = 0; i < n; ++i) {
      ok &= cur.hard_mask[i] == (chosen.count(i) ? 1.0 : 0.0);
      if (chosen.count(i)) {
        min_in = std::min(min_in, p[i]);
      } else if (std::isfinite(s[i])) {
        max_out = std::max(max_out, p[i]);
      }
    }
    ok &= min_in >= max_out;
    for (std::size_t i = 1; i < cur.indices.size(); ++i) {
      ok &= p[cur.indices[i - 1]] <= p[cur.indices[i]];
    }
    if (!ok) ++selection_failures;

    // dm/dp = I on the fused op directly...
    Var leaf = Var::parameter(p);
    const Var m = ad::straight_through(cur.hard_mask, leaf);
    const auto direct = jacobian(m, leaf);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        jac_err = std::max(jac_err, std::abs(direct[i][j] - (i == j ? 1.0 : 0.0)));
      }
    }
    // ...and through the selection: dm/ds equals dp/ds.
    const auto via_mask = jacobian(cur.mask, scores);
    const auto via_p = jacobian(cur.relevance, scores);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double d = via_mask[i][j] - via_p[i][j];
        jac_err = std::max(jac_err, std::isfinite(d) ? std::abs(d) : 1e9);
      }
    }
  }
  return {value_failures == 0 && selection_failures == 0 && jac_err <= 1e-6,
          std::to_string(value_failures) + " value mismatches, " +
              std::to_string(selection_failures) + " wrong selections, max |J - I| " +
              fmt(jac_err) + " over 1000 cases"};
}

// ---------------------------------------------------------------- 3

// θ and θ0 emit bias-only logits, so L_curr is uniform and L_base is set
// per level to hit a chosen gain.
LossReport hinge_fixture(double gain, double margin, double lambda) {
  const testing::TinyWorld w = testing::make_tiny_world(0);
  const std::span<const TrainingExample> one(w.pay.train.data(), 1);
  const Batch batch = make_batch(one, w.tokenizer);
  ModelParams baseline = ModelParams::init(w.config, 5, 0.1);
  for (int l = 0; l < w.config.levels; ++l) {
    const std::string head = "head" + std::to_string(l);
    baseline.at(head + ".w").mutable_value().fill(0.0);
    baseline.at(head + ".b").mutable_value().fill(0.0);
  }
  ModelParams params = baseline.clone();
  params.reinit_curriculum_params(6);
  for (int l = 0; l < w.config.levels; ++l) {
    // -log p(target) = log V + gain  <=>  p = exp(-gain) / V.
    const double v = w.config.vocab_sizes[l];
    const double p = std::exp(-gain) / v;
    baseline.at("head" + std::to_string(l) + ".b").mutable_value()[batch.target_tokens[l]] =
        std::log(p * (v - 1.0) / (1.0 - p));
  }
  SftConfig sc;
  sc.margin = margin;
  sc.lambda_qual = lambda;
  return loss_sft(params, baseline, w.config, batch, sc).report;
}

Outcome loss_formulas() {
  const LossReport good = hinge_fixture(0.5, 0.1, 0.1);
  const LossReport bad = hinge_fixture(-0.2, 0.1, 0.1);
  double additivity = 0.0;
  for (double lambda : {0.0, 0.1, 1.0, 3.0}) {
    const LossReport r = hinge_fixture(-0.2, 0.1, lambda);
    additivity = std::max(additivity, std::abs(r.l_total - (r.l_sft + lambda * r.l_qual)));
  }

  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.levels = 4;
  c.vocab_sizes = {256, 256, 256, 256};
  c.max_history = 4;
  ModelParams params = ModelParams::init(c, 1);
  for (int l = 0; l < 4; ++l) params.at("head" + std::to_string(l) + ".w").mutable_value().fill(0.0);
  const Batch batch = testing::random_batch(c, {4, 2, 3}, 3);
  const double nll = loss_pretrain(params, c, batch).report.nll_per_example;
  const double uniform = 4.0 * std::log(256.0);

  const bool pass = std::abs(good.l_qual) <= 1e-9 && std::abs(bad.l_qual - 0.3) <= 1e-9 &&
                    std::abs(good.nll_gain() - 0.5) <= 1e-9 &&
                    std::abs(bad.nll_gain() + 0.2) <= 1e-9 && additivity <= 1e-6 &&
                    std::abs(nll - uniform) <= 1e-3;
  return {pass, "L_qual " + fmt(good.l_qual) + " at gain 0.5, " + fmt(bad.l_qual) +
                    " at gain -0.2; additivity error " + fmt(additivity) +
                    "; uniform NLL " + fmt(nll) + " vs " + fmt(uniform)};
}

// ---------------------------------------------------------------- 4

Outcome metric_oracles() {
  std::mt19937_64 rng(404);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<ItemId> ranked(30);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::shuffle(ranked.begin(), ranked.end(), rng);
    ranked.resize(std::uniform_int_distribution<int>(0, 25)(rng));
    const ItemId target = std::uniform_int_distribution<int>(0, 35)(rng);
    const int k = std::uniform_int_distribution<int>(1, 20)(rng);
    // Walk the list by hand.
    double hit = 0.0, gain = 0.0;
    for (int i = 0; i < std::min<int>(k, ranked.size()); ++i) {
      if (ranked[i] == target) {
        hit = 1.0;
        gain = 1.0 / std::log2(static_cast<double>(i) + 2.0);
      }
    }
    if (recall_at_k(ranked, target, k) != hit || ndcg_at_k(ranked, target, k) != gain) {
      ++mismatches;
    }
  }
  const std::vector<ItemId> third{7, 8, 9};
  const double rank3 = ndcg_at_k(third, 9, 5);
  return {mismatches == 0 && rank3 == 0.5,
          std::to_string(mismatches) + " mismatches in 500 fixtures; ndcg at rank 3 = " +
              fmt(rank3)};
}

// ---------------------------------------------------------------- 5

Outcome beam_exactness() {
  int disagreements = 0;
  int cases = 0;
  double max_diff = 0.0;
  for (int items : {16, 40, 64}) {
    const testing::TinyWorld w = testing::make_tiny_world(items, 30, items);
    const ModelParams params = ModelParams::init(w.config, items + 1, 0.5);
    const TokenTrie trie(w.tokenizer);
    const std::size_t n = std::min<std::size_t>(4, w.pay.test.size());
    const std::span<const TrainingExample> examples(w.pay.test.data(), n);
    const Batch batch = make_batch(examples, w.tokenizer);
    for (CurriculumMode mode :
         {CurriculumMode::kLearned, CurriculumMode::kRecent, CurriculumMode::kNone}) {
      EvalOptions opt;
      opt.beam_width = items;
      opt.top_n = items;
      opt.curriculum.mode = mode;
      opt.curriculum.k = 3;
      const auto gens = generate_topn(params, w.config, trie, batch, opt);

      ad::NoGradGuard guard;
      const EncoderStates states = encode_history(params, w.config, batch);
      std::vector<TokenSeq> prefixes(batch.size);
      if (mode != CurriculumMode::kNone) {
        const auto cur = batch_curricula(params, w.config, batch, states, opt.curriculum);
        for (std::size_t r = 0; r < batch.size; ++r) prefixes[r] = cur[r].tokens;
      }
      for (std::size_t r = 0; r < batch.size; ++r) {
        ++cases;
        // Exhaustive: teacher-force every catalog sequence.
        std::map<ItemId, double> exact;
        for (ItemId item : w.tokenizer.items()) {
          DecoderRow row;
          row.tokens = prefixes[r];
          row.prefix_length = prefixes[r].size();
          const TokenSeq& z = w.tokenizer.encode(item);
          row.tokens.insert(row.tokens.end(), z.begin(), z.end());
          const std::vector<std::size_t> owner{r};
          const auto logits = decode_forward(params, w.config, states, {row}, {}, owner);
          double lp = 0.0;
          for (std::size_t s = 0; s < z.size(); ++s) {
            lp += logits.log_probs(0, prefixes[r].size() + s)[z[s]];
          }
          exact[item] = lp;
        }
        const auto& ranked = gens[r].ranked;
        bool ok = ranked.size() == exact.size() && !gens[r].short_list;
        for (std::size_t i = 0; ok && i < ranked.size(); ++i) {
          const double d = std::abs(ranked[i].log_prob - exact.at(ranked[i].item));
          max_diff = std::max(max_diff, d);
          ok &= d <= 1e-9;
          // Equal to the exhaustive order up to exact ties.
          if (i > 0) ok &= exact.at(ranked[i - 1].item) >= exact.at(ranked[i].item) - 1e-12;
        }
        if (!ok) ++disagreements;
      }
    }
  }
  return {disagreements == 0, std::to_string(disagreements) + " of " + std::to_string(cases) +
                                  " rankings differ (catalogs of 16, 40, 64); max log-prob gap " +
                                  fmt(max_diff)};
}

// ---------------------------------------------------------------- 6

Outcome tokenizer_contract() {
  SyntheticOptions opt;
  opt.num_users = 20;
  opt.num_items = 1000;
  opt.events_per_user = 20;
  opt.seed = 6;
  const SyntheticDataset data = generate_synthetic(opt);
  const ItemEmbeddingTable table = data.catalog.embedding_table();
  const auto tok = SemanticCodebooks::fit(table, {.levels = 4, .codebook_size = 8, .seed = 6});
  std::set<TokenSeq> seen;
  int round_trip_failures = 0;
  for (ItemId item : table.ids) {
    const TokenSeq& z = tok.encode(item);
    seen.insert(z);
    if (tok.decode(z) != item) ++round_trip_failures;
  }
  std::vector<double> mse;
  for (int used = 0; used < 4; ++used) mse.push_back(tok.reconstruction_mse(table, used));
  const bool monotone = std::is_sorted(mse.rbegin(), mse.rend());
  std::string curve;
  for (double m : mse) curve += (curve.empty() ? "" : " ") + fmt(m);
  return {seen.size() == table.size() && round_trip_failures == 0 && monotone,
          std::to_string(seen.size()) + " distinct codes for " + std::to_string(table.size()) +
              " items; " + std::to_string(round_trip_failures) +
              " round-trip failures; residual MSE by level " + curve};
}

// ---------------------------------------------------------------- 7

Outcome frozen_baseline() {
  const testing::TinyWorld w = testing::make_tiny_world(7, 80);
  const ModelParams baseline = ModelParams::init(w.config, 8);
  const std::string before = hash_params(baseline);
  SftConfig sc;
  sc.batch_size = 8;
  sc.epochs = 10000;
  sc.max_steps = 500;
  const SftResult r = sft(baseline, w.config, w.pay.train, w.tokenizer, sc);
  const std::string after = hash_params(baseline);
  const bool moved = hash_params(r.params) != before;
  return {r.steps == 500 && before == after && r.baseline_hash_before == before &&
              r.baseline_hash_after == before && moved,
          std::to_string(r.steps) + " SFT steps; theta0 " + before.substr(0, 12) +
              (before == after ? " unchanged" : " CHANGED to " + after.substr(0, 12)) +
              "; fine-tuned weights " + (moved ? "moved" : "did not move")};
}

// ---------------------------------------------------------------- 8-10

struct AblationOutcomes {
  Outcome rcpm, quality, k_shape;
};

AblationOutcomes ablation(const fs::path& root) {
  cli::RunConfig config = cli::load_run_config(fs::path(REVCURR_CONFIG_DIR) / "desk.yaml");
  config.out = (root / "desk").string();
  fs::remove_all(config.out);
  fs::create_directories(config.out);
  std::ofstream log(fs::path(config.out) / "acceptance.log");
  cli::cmd_gen_data(config, log);
  cli::cmd_fit_tokenizer(config, log);
  cli::cmd_pretrain(config, log);
  const AblationTable table = cli::cmd_ablate(config, log);

  auto mean5 = [&](const std::string& v) { return table.find(v).recall5_mean; };
  const auto full = table.runs_of("full");
  const auto none = table.runs_of("no_rcpm");
  double worst_seed = std::numeric_limits<double>::infinity();
  std::string per_seed;
  for (std::size_t i = 0; i < full.size() && i < none.size(); ++i) {
    const double d = full[i]->report.recall5 - none[i]->report.recall5;
    worst_seed = std::min(worst_seed, d);
    per_seed += (per_seed.empty() ? "" : " ") + fmt(d);
  }
  AblationOutcomes out;
  const bool seeds_ok = full.size() == 3 && none.size() == 3 && worst_seed >= -0.005;
  out.rcpm = {mean5("full") > mean5("no_rcpm") && seeds_ok && mean5("full") >= mean5("recent_k"),
              "R@5 full " + fmt(mean5("full")) + ", no_rcpm " + fmt(mean5("no_rcpm")) +
                  ", recent_k " + fmt(mean5("recent_k")) + "; per-seed full - no_rcpm " +
                  per_seed};
  const auto gain = table.find("full").train_gain_mean;
  out.quality = {config.sft.lambda_qual == 0.1 && gain && *gain > 0.0,
                 "train-set mean L_base - L_curr at lambda 0.1: " +
                     (gain ? fmt(*gain) : std::string("missing"))};
  const double k1 = mean5("k=1"), k4 = mean5("k=4");
  out.k_shape = {k4 >= k1, "R@5 k=4 " + fmt(k4) + ", k=1 " + fmt(k1)};
  return out;
}

// ---------------------------------------------------------------- 11

Outcome reproducibility(const fs::path& root) {
  std::vector<std::string> json, csv;
  for (const char* run : {"a", "b"}) {
    cli::RunConfig config = cli::load_run_config(fs::path(REVCURR_CONFIG_DIR) / "tiny.yaml");
    config.out = (root / "tiny" / run).string();
    fs::remove_all(config.out);
    std::ostringstream log;
    cli::cmd_pipeline(config, log);
    const cli::Layout layout{config.out};
    json.push_back(read_file(layout.report_json()));
    csv.push_back(read_file(layout.report_csv()));
  }
  const bool same = !json[0].empty() && json[0] == json[1] && csv[0] == csv[1];
  return {same, "report.json " + std::to_string(json[0].size()) + " bytes, report.csv " +
                    std::to_string(csv[0].size()) + " bytes, " +
                    (same ? "identical" : "DIFFERENT") + " across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) != 0; };
  const fs::path root = fs::current_path() / "acceptance_runs";

  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o, double seconds) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << name << ": " << o.detail
              << " [" << fmt(seconds) << " s]" << std::endl;
    if (!o.pass) ++failures;
  };
  auto timed = [&](int n, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    report(n, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  timed(1, "gradient correctness", gradients);
  timed(2, "straight-through mask", straight_through_contract);
  timed(3, "loss formulas", loss_formulas);
  timed(4, "metric oracles", metric_oracles);
  timed(5, "beam search exactness", beam_exactness);
  timed(6, "tokenizer", tokenizer_contract);
  timed(7, "frozen baseline", frozen_baseline);

  if (wanted(8) || wanted(9) || wanted(10)) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationOutcomes a;
    try {
      a = ablation(root);
    } catch (const std::exception& e) {
      const Outcome err{false, std::string("threw: ") + e.what()};
      a = {err, err, err};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (wanted(8)) report(8, "curriculum vs no curriculum", a.rcpm, s);
    if (wanted(9)) report(9, "quality loss keeps the gain positive", a.quality, s);
    if (wanted(10)) report(10, "k=4 at least k=1", a.k_shape, s);
  }

  timed(11, "reproducible pipeline", [&] { return reproducibility(root); });
  return failures == 0 ? 0 : 1;
}
