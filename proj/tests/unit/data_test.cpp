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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "revcurr/data.hpp"
#include "revcurr/error.hpp"

namespace revcurr {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("revcurr_data_test_" + name);
}

// Fraction of pay events with >= `need` same-category events among the
// `window` preceding ones.
double coherent_fraction(const SyntheticDataset& ds, int window, int need) {
  std::size_t pays = 0, coherent = 0;
  for (const auto& seq : ds.sequences) {
    for (std::size_t t = 0; t < seq.events.size(); ++t) {
      if (seq.events[t].behavior != Behavior::kPay) continue;
      ++pays;
      const int cat = ds.catalog.item_category[seq.events[t].item];
      int same = 0;
      for (std::size_t j = t >= static_cast<std::size_t>(window) ? t - window : 0;
           j < t; ++j) {
        if (ds.catalog.item_category[seq.events[j].item] == cat) ++same;
      }
      if (same >= need) ++coherent;
    }
  }
  return pays ? static_cast<double>(coherent) / pays : 0.0;
}

TEST(SyntheticTest, CoherentConversionsHaveClusters) {
  SyntheticOptions opt;
  opt.num_users = 200;
  opt.num_items = 200;
  opt.coherence = 1.0;
  opt.cluster_length = 3;
  const auto ds = generate_synthetic(opt);
  EXPECT_EQ(coherent_fraction(ds, 6, 3), 1.0);
  EXPECT_EQ(coherent_fraction(ds, 2 * 3, 2), 1.0);

  opt.coherence = 0.0;
  const auto incoherent = generate_synthetic(opt);
  EXPECT_LT(coherent_fraction(incoherent, 6, 2), 1.0);
}

TEST(SyntheticTest, PayShareTracksConversionRate) {
  SyntheticOptions opt;
  opt.num_users = 400;
  opt.events_per_user = 250;  // ~1e5 events
  opt.conversion_rate = 0.0125;
  const auto ds = generate_synthetic(opt);
  std::size_t events = 0, pays = 0;
  for (const auto& seq : ds.sequences) {
    events += seq.events.size();
    for (const auto& e : seq.events) pays += e.behavior == Behavior::kPay;
  }
  ASSERT_GE(events, 90000u);
  const double share = static_cast<double>(pays) / events;
  EXPECT_GE(share, 0.00875);
  EXPECT_LE(share, 0.01625);
}

TEST(SyntheticTest, DeterministicForSeed) {
  SyntheticOptions opt;
  opt.num_users = 50;
  opt.seed = 17;
  const auto a = generate_synthetic(opt);
  const auto b = generate_synthetic(opt);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_EQ(a.catalog.embeddings, b.catalog.embeddings);
}

TEST(SyntheticTest, WithinCategoryEmbeddingsCloser) {
  SyntheticOptions opt;
  opt.num_users = 1;
  opt.num_items = 100;
  opt.num_categories = 10;
  const auto ds = generate_synthetic(opt);
  const auto& e = ds.catalog.embeddings;
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t j = i + 1; j < e.rows(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < e.cols(); ++k) {
        d += (e.at(i, k) - e.at(j, k)) * (e.at(i, k) - e.at(j, k));
      }
      if (ds.catalog.item_category[i] == ds.catalog.item_category[j]) {
        within += d;
        ++nw;
      } else {
        across += d;
        ++na;
      }
    }
  }
  EXPECT_LT(within / nw, across / na);
}

TEST(SyntheticTest, RejectsBadParameters) {
  SyntheticOptions opt;
  opt.num_items = 5;
  opt.num_categories = 10;
  EXPECT_THROW(generate_synthetic(opt), ParameterError);
  opt = {};
  opt.conversion_rate = 0.0;
  EXPECT_THROW(generate_synthetic(opt), ParameterError);
  opt = {};
  opt.cluster_length = 0;
  EXPECT_THROW(generate_synthetic(opt), ParameterError);
}

InteractionSequence seq_of(UserId u, std::vector<Event> events) {
  return {u, std::move(events)};
}

TEST(SplitTest, SinglePayUserContributesTestOnly) {
  std::vector<InteractionSequence> seqs{seq_of(
      1, {{Behavior::kClick, 3}, {Behavior::kClick, 4}, {Behavior::kPay, 5}})};
  const auto split = split_examples(seqs, Behavior::kPay, 50);
  EXPECT_TRUE(split.train.empty());
  EXPECT_TRUE(split.valid.empty());
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.test[0].target_item, 5);
  EXPECT_EQ(split.test[0].history.size(), 2u);
}

TEST(SplitTest, UserWithoutTargetsIsSkipped) {
  std::vector<InteractionSequence> seqs{
      seq_of(1, {{Behavior::kClick, 3}}),
      seq_of(2, {{Behavior::kClick, 3}, {Behavior::kPay, 1}})};
  const auto split = split_examples(seqs, Behavior::kPay, 50);
  EXPECT_EQ(split.skipped_users, 1u);
  EXPECT_EQ(split.test.size(), 1u);
}

TEST(SplitTest, TargetWithoutHistoryDropped) {
  std::vector<InteractionSequence> seqs{seq_of(1, {{Behavior::kPay, 3}})};
  const auto split = split_examples(seqs, Behavior::kPay, 50);
  EXPECT_TRUE(split.test.empty());
}

TEST(SplitTest, MixedSplitCoversAllBehaviorsWithoutLeakage) {
  SyntheticOptions opt;
  opt.num_users = 30;
  opt.events_per_user = 120;
  const auto ds = generate_synthetic(opt);
  const auto split = split_examples(ds.sequences, std::nullopt, 20);
  std::set<Behavior> seen;
  for (const auto& ex : split.train) seen.insert(ex.target_behavior);
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(kNumBehaviors));
  EXPECT_EQ(split.test.size(), ds.sequences.size());
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    for (const auto& ex : *part) {
      EXPECT_LE(ex.history.size(), 20u);
      EXPECT_FALSE(ex.history.empty());
    }
  }
  // The target event is the one immediately after the history window.
  for (const auto& ex : split.test) {
    const auto& events = ds.sequences[ex.user].events;
    EXPECT_EQ(events.back().item, ex.target_item);
    EXPECT_EQ(ex.history.back(), events[events.size() - 2]);
  }
}

TEST(SplitTest, TruncationRemovesHeldOutConversions) {
  std::vector<InteractionSequence> seqs{
      seq_of(1, {{Behavior::kClick, 1},
                 {Behavior::kPay, 2},
                 {Behavior::kClick, 3},
                 {Behavior::kPay, 4},
                 {Behavior::kClick, 5},
                 {Behavior::kPay, 6}})};
  const auto cut = truncate_before_holdout(seqs, Behavior::kPay);
  ASSERT_EQ(cut.size(), 1u);
  EXPECT_EQ(cut[0].events.size(), 3u);
}

TEST(TsvTest, EmptyFileGivesNoSequences) {
  const auto path = temp_file("empty.tsv");
  { std::ofstream out(path); }
  EXPECT_TRUE(load_tsv(path).empty());
  fs::remove(path);
}

TEST(TsvTest, RowsSortedByTimestamp) {
  const auto path = temp_file("shuffled.tsv");
  {
    std::ofstream out(path);
    out << "7\t30\t3\t300\n7\t10\t1\t100\n7\t20\t2\t200\n";
  }
  const auto seqs = load_tsv(path);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].user, 7);
  ASSERT_EQ(seqs[0].events.size(), 3u);
  EXPECT_EQ(seqs[0].events[0].item, 10);
  EXPECT_EQ(seqs[0].events[1].item, 20);
  EXPECT_EQ(seqs[0].events[2].item, 30);
  EXPECT_EQ(seqs[0].events[2].behavior, Behavior::kPay);
  fs::remove(path);
}

TEST(TsvTest, MalformedRowReportsLine) {
  const auto path = temp_file("bad.tsv");
  {
    std::ofstream out(path);
    out << "1\t2\t1\t5\n1\tx\t1\t6\n";
  }
  try {
    load_tsv(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  {
    std::ofstream out(path);
    out << "1\t2\t9\t5\n";
  }
  EXPECT_THROW(load_tsv(path), ParseError);
  fs::remove(path);
}

TEST(TsvTest, WriteLoadRoundTrip) {
  SyntheticOptions opt;
  opt.num_users = 20;
  opt.events_per_user = 40;
  const auto ds = generate_synthetic(opt);
  const auto path = temp_file("roundtrip.tsv");
  write_tsv(path, ds.sequences);
  EXPECT_EQ(load_tsv(path), ds.sequences);
  const auto jpath = temp_file("roundtrip.jsonl");
  write_jsonl(jpath, ds.sequences);
  EXPECT_EQ(read_jsonl(jpath), ds.sequences);
  fs::remove(path);
  fs::remove(jpath);
}

SemanticCodebooks small_tokenizer() {
  ItemEmbeddingTable t;
  t.vectors = ad::Tensor({10, 2});
  for (int i = 0; i < 10; ++i) {
    t.ids.push_back(i);
    t.vectors.at(i, 0) = i;
    t.vectors.at(i, 1) = i % 3;
  }
  return SemanticCodebooks::fit(t, {.levels = 3, .codebook_size = 3});
}

TrainingExample example(std::vector<ItemId> items, ItemId target) {
  TrainingExample ex;
  for (ItemId i : items) ex.history.push_back({Behavior::kClick, i});
  ex.target_item = target;
  return ex;
}

TEST(BatchTest, SingleExampleFullyValid) {
  const auto tok = small_tokenizer();
  std::vector<TrainingExample> exs{example({1, 2, 3}, 4)};
  const Batch b = make_batch(exs, tok);
  EXPECT_EQ(b.width, 3u);
  for (auto m : b.mask) EXPECT_EQ(m, 1);
}

TEST(BatchTest, LeftPaddingAndTokenLayout) {
  const auto tok = small_tokenizer();
  std::vector<TrainingExample> exs{example({1, 2, 3}, 4),
                                   example({5, 6, 7, 8, 9}, 0)};
  const Batch b = make_batch(exs, tok);
  EXPECT_EQ(b.width, 5u);
  int masked = 0;
  for (std::size_t s = 0; s < b.width; ++s) masked += b.mask[s] == 0;
  EXPECT_EQ(masked, 2);
  EXPECT_EQ(b.mask[0], 0);
  EXPECT_EQ(b.mask[1], 0);
  // Most recent event is always the last slot.
  EXPECT_EQ(b.history_items[b.width - 1], 3);
  const std::size_t L = 3;
  for (std::size_t r = 0; r < b.size; ++r) {
    for (std::size_t t = 0; t < static_cast<std::size_t>(b.lengths[r]); ++t) {
      const std::size_t s = r * b.width + b.slot(r, t);
      const TokenSeq& z = tok.encode(exs[r].history[t].item);
      for (std::size_t l = 0; l < L; ++l) {
        EXPECT_EQ(b.history_tokens[s * L + l], z[l]);
      }
    }
  }
  EXPECT_EQ(b.target_tokens.size(), 2 * L);
}

TEST(BatchTest, UnknownItemIsLookupError) {
  const auto tok = small_tokenizer();
  std::vector<TrainingExample> exs{example({1, 42}, 4)};
  EXPECT_THROW(make_batch(exs, tok), LookupError);
}

}  // namespace
}  // namespace revcurr
