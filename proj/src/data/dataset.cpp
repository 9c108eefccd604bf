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
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "revcurr/data.hpp"
#include "revcurr/error.hpp"

namespace revcurr {

std::string behavior_name(Behavior b) {
  switch (b) {
    case Behavior::kImpression:
      return "impression";
    case Behavior::kClick:
      return "click";
    case Behavior::kAddToCart:
      return "add-to-cart";
    case Behavior::kPay:
      return "pay";
  }
  return "unknown";
}

Behavior behavior_from_code(int code) {
  if (code < 0 || code >= kNumBehaviors) {
    throw ParameterError("unknown behavior code " + std::to_string(code));
  }
  return static_cast<Behavior>(code);
}

Split split_examples(std::span<const InteractionSequence> sequences,
                     std::optional<Behavior> filter, std::size_t max_history) {
  if (sequences.empty()) throw InputError("split_examples: no sequences");
  Split split;
  for (const InteractionSequence& seq : sequences) {
    std::vector<std::size_t> targets;
    for (std::size_t t = 0; t < seq.events.size(); ++t) {
      if (!filter || seq.events[t].behavior == *filter) targets.push_back(t);
    }
    if (targets.empty()) {
      ++split.skipped_users;
      continue;
    }
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const std::size_t pos = targets[j];
      if (pos == 0) continue;  // no history
      TrainingExample ex;
      ex.user = seq.user;
      const std::size_t begin = pos > max_history ? pos - max_history : 0;
      ex.history.assign(seq.events.begin() + begin, seq.events.begin() + pos);
      ex.target_behavior = seq.events[pos].behavior;
      ex.target_item = seq.events[pos].item;
      const std::size_t from_end = targets.size() - 1 - j;
      if (from_end == 0) {
        split.test.push_back(std::move(ex));
      } else if (from_end == 1) {
        split.valid.push_back(std::move(ex));
      } else {
        split.train.push_back(std::move(ex));
      }
    }
  }
  return split;
}

std::vector<InteractionSequence> truncate_before_holdout(
    std::span<const InteractionSequence> sequences, Behavior holdout) {
  std::vector<InteractionSequence> out;
  out.reserve(sequences.size());
  for (const InteractionSequence& seq : sequences) {
    std::vector<std::size_t> hits;
    for (std::size_t t = 0; t < seq.events.size(); ++t) {
      if (seq.events[t].behavior == holdout) hits.push_back(t);
    }
    std::size_t cut = seq.events.size();
    if (hits.size() >= 2) {
      cut = hits[hits.size() - 2];
    } else if (hits.size() == 1) {
      cut = hits[0];
    }
    if (cut == 0) continue;
    InteractionSequence trimmed;
    trimmed.user = seq.user;
    trimmed.events.assign(seq.events.begin(), seq.events.begin() + cut);
    out.push_back(std::move(trimmed));
  }
  return out;
}

namespace {

template <typename T>
T parse_field(const std::string& field, std::size_t line, const char* what) {
  T value{};
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(std::string("bad ") + what + " '" + field + "'", line);
  }
  return value;
}

}  // namespace

std::vector<InteractionSequence> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  struct Row {
    std::int64_t timestamp;
    Event event;
  };
  std::map<UserId, std::vector<Row>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 4) {
      throw ParseError("expected 4 tab-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const auto user = parse_field<UserId>(fields[0], line_no, "user id");
    const auto item = parse_field<ItemId>(fields[1], line_no, "item id");
    const auto code = parse_field<int>(fields[2], line_no, "behavior code");
    const auto ts = parse_field<std::int64_t>(fields[3], line_no, "timestamp");
    if (code < 0 || code >= kNumBehaviors) {
      throw ParseError("unknown behavior code " + std::to_string(code), line_no);
    }
    rows[user].push_back({ts, {static_cast<Behavior>(code), item}});
  }
  std::vector<InteractionSequence> out;
  for (auto& [user, user_rows] : rows) {
    std::stable_sort(user_rows.begin(), user_rows.end(),
                     [](const Row& a, const Row& b) {
                       return a.timestamp < b.timestamp;
                     });
    InteractionSequence seq;
    seq.user = user;
    for (const Row& r : user_rows) seq.events.push_back(r.event);
    out.push_back(std::move(seq));
  }
  return out;
}

void write_tsv(const std::filesystem::path& path,
               std::span<const InteractionSequence> sequences) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const InteractionSequence& seq : sequences) {
    for (std::size_t t = 0; t < seq.events.size(); ++t) {
      out << seq.user << '\t' << seq.events[t].item << '\t'
          << behavior_code(seq.events[t].behavior) << '\t' << t << '\n';
    }
  }
}

void write_jsonl(const std::filesystem::path& path,
                 std::span<const InteractionSequence> sequences) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const InteractionSequence& seq : sequences) {
    nlohmann::json events = nlohmann::json::array();
    for (const Event& e : seq.events) {
      events.push_back({behavior_code(e.behavior), e.item});
    }
    out << nlohmann::json{{"user", seq.user}, {"events", std::move(events)}}
               .dump()
        << '\n';
  }
}

std::vector<InteractionSequence> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<InteractionSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      InteractionSequence seq;
      seq.user = j.at("user").get<UserId>();
      for (const auto& e : j.at("events")) {
        seq.events.push_back(
            {behavior_from_code(e.at(0).get<int>()), e.at(1).get<ItemId>()});
      }
      out.push_back(std::move(seq));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParameterError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

void save_catalog(const std::filesystem::path& path,
                  const SyntheticCatalog& catalog) {
  nlohmann::json j;
  j["num_categories"] = catalog.num_categories;
  j["item_category"] = catalog.item_category;
  j["dim"] = catalog.embeddings.cols();
  j["embeddings"] = catalog.embeddings.storage();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump() << '\n';
}

SyntheticCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  SyntheticCatalog cat;
  cat.num_categories = j.at("num_categories").get<int>();
  cat.item_category = j.at("item_category").get<std::vector<int>>();
  cat.embeddings =
      ad::Tensor({cat.item_category.size(), j.at("dim").get<std::size_t>()},
                 j.at("embeddings").get<std::vector<double>>());
  return cat;
}

std::size_t Batch::slot(std::size_t row, std::size_t t) const {
  const std::size_t len = static_cast<std::size_t>(lengths[row]);
  return pad == PadPolicy::kLeft ? width - len + t : t;
}

Batch make_batch(std::span<const TrainingExample> examples,
                 const SemanticCodebooks& tokenizer, PadPolicy pad) {
  if (examples.empty()) throw InputError("make_batch: empty batch");
  Batch b;
  b.size = examples.size();
  b.levels = tokenizer.levels();
  b.pad = pad;
  for (const TrainingExample& ex : examples) {
    if (ex.history.empty()) throw InputError("make_batch: empty history");
    b.width = std::max(b.width, ex.history.size());
  }
  const std::size_t L = static_cast<std::size_t>(b.levels);
  b.history_tokens.assign(b.size * b.width * L, 0);
  b.history_behaviors.assign(b.size * b.width, 0);
  b.mask.assign(b.size * b.width, 0);
  b.history_items.assign(b.size * b.width, -1);
  for (std::size_t r = 0; r < b.size; ++r) {
    const TrainingExample& ex = examples[r];
    b.lengths.push_back(static_cast<int>(ex.history.size()));
    for (std::size_t t = 0; t < ex.history.size(); ++t) {
      const std::size_t s = r * b.width + b.slot(r, t);
      const TokenSeq& z = tokenizer.encode(ex.history[t].item);
      std::copy(z.begin(), z.end(), b.history_tokens.begin() + s * L);
      b.history_behaviors[s] = behavior_code(ex.history[t].behavior);
      b.mask[s] = 1;
      b.history_items[s] = ex.history[t].item;
    }
    const TokenSeq& z = tokenizer.encode(ex.target_item);
    b.target_tokens.insert(b.target_tokens.end(), z.begin(), z.end());
    b.target_items.push_back(ex.target_item);
    b.target_behaviors.push_back(ex.target_behavior);
    b.users.push_back(ex.user);
  }
  return b;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with explicit draws keeps the order stable across standard
  // library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace revcurr
