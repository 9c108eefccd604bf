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

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <tuple>

#include "revcurr/error.hpp"
#include "revcurr/eval.hpp"

namespace revcurr {

SftConfig variant_config(const std::string& variant, const SftConfig& full) {
  SftConfig c = full;
  if (variant == "full") return c;
  if (variant == "no_rcpm") {
    // Without a curriculum there is no prefixed loss to compare, so the hinge
    // is dropped as well.
    c.mode = CurriculumMode::kNone;
    c.lambda_qual = 0.0;
    return c;
  }
  if (variant == "recent_k") {
    c.mode = CurriculumMode::kRecent;
    return c;
  }
  if (variant == "no_quality") {
    c.lambda_qual = 0.0;
    return c;
  }
  throw ParameterError("unknown ablation variant '" + variant +
                       "' (expected full, no_rcpm, recent_k or no_quality)");
}

const AblationSummary& AblationTable::find(const std::string& variant) const {
  for (const auto& s : summary) {
    if (s.variant == variant) return s;
  }
  throw InputError("ablation table has no variant '" + variant + "'");
}

std::vector<const AblationRun*> AblationTable::runs_of(
    const std::string& variant) const {
  std::vector<const AblationRun*> out;
  for (const auto& r : runs) {
    if (r.variant == variant) out.push_back(&r);
  }
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  // Sample standard deviation; zero for a single seed.
  const double sd =
      xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  return {mean, sd};
}

AblationSummary summarize(const std::string& variant, int k,
                          const std::vector<const AblationRun*>& runs) {
  AblationSummary s{.variant = variant, .k = k};
  std::vector<double> r5, r10, n5, n10, gain;
  for (const AblationRun* r : runs) {
    r5.push_back(r->report.recall5);
    r10.push_back(r->report.recall10);
    n5.push_back(r->report.ndcg5);
    n10.push_back(r->report.ndcg10);
    if (r->train_gain) gain.push_back(*r->train_gain);
  }
  std::tie(s.recall5_mean, s.recall5_std) = mean_std(r5);
  std::tie(s.recall10_mean, s.recall10_std) = mean_std(r10);
  std::tie(s.ndcg5_mean, s.ndcg5_std) = mean_std(n5);
  std::tie(s.ndcg10_mean, s.ndcg10_std) = mean_std(n10);
  if (!gain.empty()) s.train_gain_mean = mean_std(gain).first;
  return s;
}

nlohmann::json summary_json(const AblationSummary& s) {
  nlohmann::json j{{"variant", s.variant},
                   {"k", s.k},
                   {"recall@5", {{"mean", s.recall5_mean}, {"std", s.recall5_std}}},
                   {"recall@10", {{"mean", s.recall10_mean}, {"std", s.recall10_std}}},
                   {"ndcg@5", {{"mean", s.ndcg5_mean}, {"std", s.ndcg5_std}}},
                   {"ndcg@10", {{"mean", s.ndcg10_mean}, {"std", s.ndcg10_std}}}};
  j["train_gain"] = s.train_gain_mean ? nlohmann::json(*s.train_gain_mean)
                                      : nlohmann::json(nullptr);
  return j;
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<const AblationSummary*>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(10);
  out << "variant,k,recall5_mean,recall5_std,recall10_mean,recall10_std,"
         "ndcg5_mean,ndcg5_std,ndcg10_mean,ndcg10_std,train_gain\n";
  for (const AblationSummary* s : rows) {
    out << s->variant << ',' << s->k << ',' << s->recall5_mean << ','
        << s->recall5_std << ',' << s->recall10_mean << ',' << s->recall10_std
        << ',' << s->ndcg5_mean << ',' << s->ndcg5_std << ',' << s->ndcg10_mean
        << ',' << s->ndcg10_std << ',';
    if (s->train_gain_mean) out << *s->train_gain_mean;
    out << '\n';
  }
}

bool is_sweep(const std::string& variant) { return variant.starts_with("k="); }

}  // namespace

void AblationTable::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<const AblationSummary*> variants, sweep;
  for (const auto& s : summary) (is_sweep(s.variant) ? sweep : variants).push_back(&s);
  write_summary_csv(dir / "ablation.csv", variants);
  write_summary_csv(dir / "k_sweep.csv", sweep);

  std::ofstream out(dir / "ablation_runs.csv");
  if (!out) throw InputError("cannot write " + (dir / "ablation_runs.csv").string());
  out << std::setprecision(10);
  out << "variant,k,seed,recall5,recall10,ndcg5,ndcg10,train_gain,seconds,"
         "fingerprint\n";
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) {
    out << r.variant << ',' << r.k << ',' << r.seed << ',' << r.report.recall5
        << ',' << r.report.recall10 << ',' << r.report.ndcg5 << ','
        << r.report.ndcg10 << ',';
    if (r.train_gain) out << *r.train_gain;
    out << ',' << r.seconds << ',' << r.report.fingerprint << '\n';
    runs_json.push_back({{"variant", r.variant},
                         {"k", r.k},
                         {"seed", r.seed},
                         {"recall@5", r.report.recall5},
                         {"recall@10", r.report.recall10},
                         {"ndcg@5", r.report.ndcg5},
                         {"ndcg@10", r.report.ndcg10},
                         {"train_gain", r.train_gain ? nlohmann::json(*r.train_gain)
                                                     : nlohmann::json(nullptr)},
                         {"seconds", r.seconds},
                         {"fingerprint", r.report.fingerprint}});
  }
  nlohmann::json summary_list = nlohmann::json::array();
  for (const auto& s : summary) summary_list.push_back(summary_json(s));
  std::ofstream js(dir / "ablation.json");
  if (!js) throw InputError("cannot write " + (dir / "ablation.json").string());
  js << nlohmann::json{{"summary", summary_list}, {"runs", runs_json}}.dump(2) << '\n';
}

AblationTable run_ablations(const ModelParams& baseline,
                            const ModelConfig& config,
                            const SemanticCodebooks& tokenizer,
                            std::span<const TrainingExample> train,
                            std::span<const TrainingExample> test,
                            const AblationConfig& ablation,
                            std::ostream* progress) {
  if (ablation.seeds.empty()) throw ParameterError("ablation: no seeds");
  if (test.empty()) throw InputError("ablation: no test examples");

  // (name, sft settings) in table order.
  std::vector<std::pair<std::string, SftConfig>> plan;
  for (const auto& v : ablation.variants) {
    plan.emplace_back(v, variant_config(v, ablation.sft));
  }
  for (int k : ablation.k_sweep) {
    SftConfig c = ablation.sft;
    c.k = k;
    c.mode = CurriculumMode::kLearned;
    plan.emplace_back("k=" + std::to_string(k), c);
  }

  AblationTable table;
  for (std::uint64_t seed : ablation.seeds) {
    std::map<std::string, std::size_t> done;  // index into table.runs
    for (const auto& [name, base_cfg] : plan) {
      SftConfig cfg = base_cfg;
      cfg.seed = seed;
      // The sweep entry at the full model's k is the full run itself.
      if (is_sweep(name) && cfg.k == ablation.sft.k && done.contains("full")) {
        AblationRun copy = table.runs[done.at("full")];
        copy.variant = name;
        table.runs.push_back(std::move(copy));
        continue;
      }
      const auto start = std::chrono::steady_clock::now();
      SftResult trained = sft(baseline, config, train, tokenizer, cfg);
      AblationRun run{.variant = name, .k = cfg.k, .seed = seed};
      EvalOptions eval = ablation.eval;
      eval.curriculum = cfg;
      run.report = evaluate(trained.params, config, tokenizer, test, eval);
      if (ablation.measure_train_gain && (name == "full" || name == "no_quality")) {
        run.train_gain =
            evaluate_nll_gain(trained.params, baseline, config, train, tokenizer, cfg);
      }
      run.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start).count();
      if (progress != nullptr) {
        *progress << "ablation " << name << " seed " << seed << ": recall@5 "
                  << run.report.recall5 << " recall@10 " << run.report.recall10
                  << " (" << std::fixed << std::setprecision(1) << run.seconds
                  << std::defaultfloat << std::setprecision(6) << " s)\n";
        progress->flush();
      }
      done[name] = table.runs.size();
      table.runs.push_back(std::move(run));
    }
  }

  for (const auto& [name, cfg] : plan) {
    table.summary.push_back(summarize(name, cfg.k, table.runs_of(name)));
  }
  return table;
}

}  // namespace revcurr
