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
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "revcurr/eval.hpp"

namespace revcurr::cli {

struct DataSection {
  // Empty: generate synthetic streams. Otherwise a TSV or JSON-lines event file
  // plus a catalog file holding item categories and embeddings.
  std::string events;
  std::string catalog;
  SyntheticOptions synthetic;  // seed comes from the global seed
};

struct EvalSection {
  EvalOptions options;  // curriculum settings come from the sft section
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2};
  std::vector<std::string> ablation_variants{"full", "no_rcpm", "recent_k",
                                             "no_quality"};
  std::vector<int> k_sweep{1, 2, 4, 6};
};

struct RunConfig {
  DataSection data;
  TokenizerOptions tokenizer;
  // levels/vocab_sizes/num_users are filled in from the tokenizer and data.
  ModelConfig model;
  PretrainConfig pretrain;
  SftConfig sft;
  EvalSection eval;
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  // Defaults: architecture at full scale, everything else at desk scale.
  static RunConfig defaults();
  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON form.
  std::string hash() const;
};

// Parses a YAML (or JSON) document over the defaults. Unknown keys, wrong
// types and out-of-range values raise ParseError with the offending line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Every key with its default, one per line, for --help.
std::string describe_config_keys();

// Independent stream for a named stage, derived from the global seed.
std::uint64_t sub_seed(std::uint64_t global, const std::string& stage);

std::string sha256_file(const std::filesystem::path& path);

// Artifact layout below RunConfig::out.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path events() const { return root / "data" / "events.jsonl"; }
  std::filesystem::path catalog() const { return root / "data" / "catalog.bin"; }
  std::filesystem::path tokenizer() const { return root / "tokenizer.bin"; }
  std::filesystem::path theta0() const { return root / "theta0.ckpt"; }
  std::filesystem::path theta() const { return root / "theta.ckpt"; }
  std::filesystem::path metrics(const std::string& stage) const {
    return root / "metrics" / (stage + ".jsonl");
  }
  std::filesystem::path report_json() const { return root / "eval" / "report.json"; }
  std::filesystem::path report_csv() const { return root / "eval" / "report.csv"; }
  std::filesystem::path ablation_dir() const { return root / "ablation"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path resolved_config() const { return root / "config.resolved.json"; }
};

// Stage commands. Each checks its prerequisites (PipelineError otherwise),
// writes its artifacts and records them in the manifest.
void cmd_gen_data(const RunConfig& config, std::ostream& log);
void cmd_fit_tokenizer(const RunConfig& config, std::ostream& log);
void cmd_pretrain(const RunConfig& config, std::ostream& log);
void cmd_sft(const RunConfig& config, std::ostream& log);
EvalReport cmd_eval(const RunConfig& config, std::ostream& log);
AblationTable cmd_ablate(const RunConfig& config, std::ostream& log);
// gen-data, fit-tokenizer, pretrain, sft and eval in order.
EvalReport cmd_pipeline(const RunConfig& config, std::ostream& log);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> problems;
};
// Rehashes every artifact in the manifest and checks that each stage's
// inputs are the outputs recorded for the stage that produced them.
VerifyResult cmd_verify(const RunConfig& config, std::ostream& log);

}  // namespace revcurr::cli
