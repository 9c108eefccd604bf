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
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "revcurr/cli.hpp"
#include "revcurr/error.hpp"

namespace revcurr::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// Paths inside the output directory are recorded relative to it.
std::string manifest_key(const Layout& layout, const fs::path& path) {
  const fs::path rel = fs::relative(path, layout.root);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return fs::absolute(path).generic_string();
}

fs::path resolve_key(const Layout& layout, const std::string& key) {
  const fs::path p(key);
  return p.is_absolute() ? p : layout.root / p;
}

nlohmann::json read_manifest(const Layout& layout) {
  if (!fs::exists(layout.manifest())) return {{"stages", nlohmann::json::object()}};
  std::ifstream in(layout.manifest());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(layout.manifest().string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Records one stage run. Inputs and outputs are hashed now.
void record_stage(const RunConfig& config, const std::string& stage,
                  const std::vector<fs::path>& inputs,
                  const std::vector<fs::path>& outputs) {
  const Layout layout{config.out};
  nlohmann::json manifest = read_manifest(layout);
  nlohmann::json entry{{"timestamp", utc_now()},
                       {"config_hash", config.hash()},
                       {"seed", config.seed},
                       {"inputs", nlohmann::json::object()},
                       {"outputs", nlohmann::json::object()}};
  for (const auto& p : inputs) entry["inputs"][manifest_key(layout, p)] = sha256_file(p);
  for (const auto& p : outputs) entry["outputs"][manifest_key(layout, p)] = sha256_file(p);
  manifest["config_hash"] = config.hash();
  manifest["stages"][stage] = entry;
  write_json(layout.manifest(), manifest);
}

void start(const RunConfig& config, const std::string& stage, std::ostream& log) {
  const Layout layout{config.out};
  fs::create_directories(layout.root);
  write_json(layout.resolved_config(), config.to_json());
  log << "[" << stage << "] output " << layout.root.string() << '\n';
}

void need(const fs::path& path, const std::string& stage, const std::string& producer) {
  if (!fs::exists(path)) {
    throw PipelineError(stage + " needs " + path.string() + "; run `" + producer +
                        "` with the same --config/--out first");
  }
}

struct Loaded {
  std::vector<InteractionSequence> sequences;
  SemanticCodebooks tokenizer;
  ModelConfig model;
};

Loaded load_inputs(const RunConfig& config, const std::string& stage) {
  const Layout layout{config.out};
  need(layout.events(), stage, "gen-data");
  need(layout.tokenizer(), stage, "fit-tokenizer");
  Loaded l;
  l.sequences = read_jsonl(layout.events());
  l.tokenizer = SemanticCodebooks::load(layout.tokenizer());
  l.model = config.model;
  l.model.levels = l.tokenizer.levels();
  l.model.vocab_sizes = l.tokenizer.vocab_sizes();
  UserId max_user = -1;
  for (const auto& s : l.sequences) max_user = std::max(max_user, s.user);
  l.model.num_users = max_user + 1;
  l.model.validate();
  return l;
}

Split pay_split(const RunConfig& config, const Loaded& l) {
  return split_examples(l.sequences, Behavior::kPay,
                        static_cast<std::size_t>(config.model.max_history));
}

ModelParams load_params(const fs::path& path, const ModelConfig& expected,
                        const std::string& stage_tag) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.stage != stage_tag) {
    throw PipelineError(path.string() + " holds a '" + ckpt.stage +
                        "' checkpoint, expected '" + stage_tag + "'");
  }
  if (!(ckpt.config == expected)) {
    throw PipelineError(path.string() +
                        " was trained with a different model config; rerun its stage");
  }
  return params_from_arrays(ckpt.arrays);
}

void save_params(const fs::path& path, const ModelConfig& model, const std::string& tag,
                 const ModelParams& params,
                 const std::map<std::string, ad::Tensor>& optimizer, long opt_steps,
                 nlohmann::json metadata) {
  Checkpoint ckpt{model, tag};
  params_to_arrays(params, ckpt.arrays);
  for (const auto& [name, t] : optimizer) ckpt.arrays.emplace(name, t);
  metadata["optimizer_steps"] = opt_steps;
  ckpt.metadata = std::move(metadata);
  save_checkpoint(path, ckpt);
}

std::ofstream open_metrics(const Layout& layout, const std::string& stage) {
  fs::create_directories(layout.metrics(stage).parent_path());
  std::ofstream out(layout.metrics(stage));
  if (!out) throw InputError("cannot write " + layout.metrics(stage).string());
  return out;
}

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions opt = config.eval.options;
  opt.curriculum = config.sft;
  return opt;
}

}  // namespace

void cmd_gen_data(const RunConfig& config, std::ostream& log) {
  start(config, "gen-data", log);
  const Layout layout{config.out};
  fs::create_directories(layout.events().parent_path());
  std::vector<fs::path> inputs;
  if (config.data.events.empty()) {
    SyntheticOptions opt = config.data.synthetic;
    opt.seed = sub_seed(config.seed, "data");
    const SyntheticDataset data = generate_synthetic(opt);
    write_jsonl(layout.events(), data.sequences);
    save_catalog(layout.catalog(), data.catalog);
    std::size_t events = 0, pays = 0;
    for (const auto& s : data.sequences) {
      events += s.events.size();
      for (const auto& e : s.events) pays += e.behavior == Behavior::kPay;
    }
    log << "[gen-data] " << data.sequences.size() << " users, " << events
        << " events, pay share " << static_cast<double>(pays) / events << '\n';
  } else {
    const fs::path events(config.data.events);
    const fs::path catalog(config.data.catalog);
    need(events, "gen-data", "data.events points at a missing file;");
    need(catalog, "gen-data", "data.catalog points at a missing file;");
    const auto sequences =
        events.extension() == ".tsv" ? load_tsv(events) : read_jsonl(events);
    write_jsonl(layout.events(), sequences);
    save_catalog(layout.catalog(), load_catalog(catalog));
    inputs = {events, catalog};
    log << "[gen-data] imported " << sequences.size() << " users\n";
  }
  record_stage(config, "gen-data", inputs, {layout.events(), layout.catalog()});
}

void cmd_fit_tokenizer(const RunConfig& config, std::ostream& log) {
  start(config, "fit-tokenizer", log);
  const Layout layout{config.out};
  need(layout.catalog(), "fit-tokenizer", "gen-data");
  const SyntheticCatalog catalog = load_catalog(layout.catalog());
  TokenizerOptions opt = config.tokenizer;
  opt.seed = sub_seed(config.seed, "tokenizer");
  const auto table = catalog.embedding_table();
  const SemanticCodebooks tok = SemanticCodebooks::fit(table, opt);
  tok.save(layout.tokenizer());
  log << "[fit-tokenizer] " << tok.num_items() << " items, vocab";
  for (int v : tok.vocab_sizes()) log << ' ' << v;
  log << "; residual mse by level";
  for (int l = 0; l <= tok.levels() - 1; ++l) log << ' ' << tok.reconstruction_mse(table, l);
  log << '\n';
  record_stage(config, "fit-tokenizer", {layout.catalog()}, {layout.tokenizer()});
}

void cmd_pretrain(const RunConfig& config, std::ostream& log) {
  start(config, "pretrain", log);
  const Layout layout{config.out};
  const Loaded l = load_inputs(config, "pretrain");
  // Pretraining never sees the held-out conversions.
  const Split mixed = split_examples(
      truncate_before_holdout(l.sequences, Behavior::kPay), std::nullopt,
      static_cast<std::size_t>(config.model.max_history));
  PretrainConfig pc = config.pretrain;
  pc.seed = sub_seed(config.seed, "pretrain-shuffle");
  auto metrics = open_metrics(layout, "pretrain");
  const PretrainResult r = pretrain(l.model, mixed.train, mixed.valid, l.tokenizer, pc,
                                    sub_seed(config.seed, "init"), &metrics);
  metrics.close();
  save_params(layout.theta0(), l.model, "pretrained", r.params, r.optimizer_state,
              r.optimizer_steps,
              {{"best_step", r.best_step},
               {"best_valid_nll", r.best_valid_nll},
               {"config_hash", config.hash()}});
  log << "[pretrain] " << mixed.train.size() << " examples, " << r.steps
      << " steps; best valid NLL " << r.best_valid_nll << " at step " << r.best_step
      << '\n';
  record_stage(config, "pretrain", {layout.events(), layout.tokenizer()},
               {layout.theta0(), layout.metrics("pretrain")});
}

void cmd_sft(const RunConfig& config, std::ostream& log) {
  start(config, "sft", log);
  const Layout layout{config.out};
  need(layout.theta0(), "sft", "pretrain");
  const Loaded l = load_inputs(config, "sft");
  const ModelParams baseline = load_params(layout.theta0(), l.model, "pretrained");
  const Split pay = pay_split(config, l);
  SftConfig sc = config.sft;
  sc.seed = sub_seed(config.seed, "sft");
  auto metrics = open_metrics(layout, "sft");
  const SftResult r = sft(baseline, l.model, pay.train, l.tokenizer, sc, &metrics);
  metrics.close();
  if (r.baseline_hash_before != r.baseline_hash_after) {
    throw PipelineError("sft: baseline parameters changed during fine-tuning");
  }
  save_params(layout.theta(), l.model, "sft", r.params, r.optimizer_state,
              r.optimizer_steps,
              {{"steps", r.steps},
               {"baseline_hash", r.baseline_hash_before},
               {"final_nll_gain", r.epochs.empty() ? 0.0 : r.epochs.back().nll_gain},
               {"config_hash", config.hash()}});
  log << "[sft] " << pay.train.size() << " conversion examples, " << r.steps
      << " steps";
  if (!r.epochs.empty()) log << "; last epoch NLL gain " << r.epochs.back().nll_gain;
  log << '\n';
  record_stage(config, "sft", {layout.events(), layout.tokenizer(), layout.theta0()},
               {layout.theta(), layout.metrics("sft")});
}

EvalReport cmd_eval(const RunConfig& config, std::ostream& log) {
  start(config, "eval", log);
  const Layout layout{config.out};
  need(layout.theta(), "eval", "sft");
  const Loaded l = load_inputs(config, "eval");
  const ModelParams params = load_params(layout.theta(), l.model, "sft");
  const Split pay = pay_split(config, l);
  const EvalReport report = evaluate(params, l.model, l.tokenizer, pay.test,
                                     eval_options(config));
  fs::create_directories(layout.report_json().parent_path());
  report.write(layout.report_json(), layout.report_csv());
  log << "[eval] " << report.users.size() << " users: recall@5 " << report.recall5
      << " recall@10 " << report.recall10 << " ndcg@5 " << report.ndcg5
      << " ndcg@10 " << report.ndcg10 << '\n';
  record_stage(config, "eval", {layout.events(), layout.tokenizer(), layout.theta()},
               {layout.report_json(), layout.report_csv()});
  return report;
}

AblationTable cmd_ablate(const RunConfig& config, std::ostream& log) {
  start(config, "ablate", log);
  const Layout layout{config.out};
  need(layout.theta0(), "ablate", "pretrain");
  const Loaded l = load_inputs(config, "ablate");
  const ModelParams baseline = load_params(layout.theta0(), l.model, "pretrained");
  const Split pay = pay_split(config, l);
  AblationConfig ab;
  ab.seeds.clear();
  for (std::uint64_t s : config.eval.ablation_seeds) {
    ab.seeds.push_back(sub_seed(config.seed, "ablate-" + std::to_string(s)));
  }
  ab.variants = config.eval.ablation_variants;
  ab.k_sweep = config.eval.k_sweep;
  ab.sft = config.sft;
  ab.eval = config.eval.options;
  const AblationTable table =
      run_ablations(baseline, l.model, l.tokenizer, pay.train, pay.test, ab, &log);
  table.write(layout.ablation_dir());
  for (const auto& s : table.summary) {
    log << "[ablate] " << s.variant << ": recall@5 " << s.recall5_mean << " ± "
        << s.recall5_std << ", recall@10 " << s.recall10_mean << " ± " << s.recall10_std
        << '\n';
  }
  const fs::path dir = layout.ablation_dir();
  record_stage(config, "ablate", {layout.events(), layout.tokenizer(), layout.theta0()},
               {dir / "ablation.csv", dir / "ablation_runs.csv", dir / "k_sweep.csv",
                dir / "ablation.json"});
  return table;
}

EvalReport cmd_pipeline(const RunConfig& config, std::ostream& log) {
  cmd_gen_data(config, log);
  cmd_fit_tokenizer(config, log);
  cmd_pretrain(config, log);
  cmd_sft(config, log);
  return cmd_eval(config, log);
}

VerifyResult cmd_verify(const RunConfig& config, std::ostream& log) {
  const Layout layout{config.out};
  if (!fs::exists(layout.manifest())) {
    throw PipelineError("verify needs " + layout.manifest().string() +
                        "; run a stage first");
  }
  const nlohmann::json manifest = read_manifest(layout);
  VerifyResult result;
  auto problem = [&](std::string what) {
    result.ok = false;
    log << "[verify] " << what << '\n';
    result.problems.push_back(std::move(what));
  };
  // Latest producer hash for every artifact.
  std::map<std::string, std::string> produced;
  for (const auto& [stage, entry] : manifest["stages"].items()) {
    for (const auto& [key, hash] : entry["outputs"].items()) {
      produced[key] = hash.get<std::string>();
    }
  }
  for (const auto& [stage, entry] : manifest["stages"].items()) {
    for (const auto& [key, hash] : entry["outputs"].items()) {
      const fs::path p = resolve_key(layout, key);
      if (!fs::exists(p)) {
        problem(stage + ": output " + key + " is missing");
      } else if (sha256_file(p) != hash.get<std::string>()) {
        problem(stage + ": output " + key + " changed since it was written");
      }
    }
    for (const auto& [key, hash] : entry["inputs"].items()) {
      const auto it = produced.find(key);
      if (it != produced.end() && it->second != hash.get<std::string>()) {
        problem(stage + ": input " + key + " was regenerated after this stage ran");
      } else if (it == produced.end()) {
        const fs::path p = resolve_key(layout, key);
        if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) {
          problem(stage + ": external input " + key + " is missing or changed");
        }
      }
    }
  }
  if (result.ok) log << "[verify] " << manifest["stages"].size() << " stages consistent\n";
  return result;
}

}  // namespace revcurr::cli
