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

#include <malloc.h>

#include <iostream>

#include "CLI11.hpp"
#include "revcurr/cli.hpp"
#include "revcurr/error.hpp"

namespace {

using revcurr::cli::RunConfig;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig::defaults()
                                      : revcurr::cli::load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees many same-sized buffers; keep them in the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Generative conversion recommender with reverse-curriculum fine-tuning"};
  app.require_subcommand(1);
  app.footer("Config keys (YAML or JSON, all optional):\n" +
             revcurr::cli::describe_config_keys());
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "run config file (YAML or JSON)");
    sub->add_option("--seed", o.seed, "override the global seed");
    sub->add_option("--out", o.out, "override the output directory");
  };

  struct Command {
    const char* name;
    const char* help;
    std::function<int(const RunConfig&)> run;
  };
  const std::vector<Command> commands{
      {"gen-data", "generate or import interaction streams",
       [](const RunConfig& c) { revcurr::cli::cmd_gen_data(c, std::cout); return 0; }},
      {"fit-tokenizer", "fit semantic codebooks on the catalog",
       [](const RunConfig& c) { revcurr::cli::cmd_fit_tokenizer(c, std::cout); return 0; }},
      {"pretrain", "train the baseline on mixed behaviors",
       [](const RunConfig& c) { revcurr::cli::cmd_pretrain(c, std::cout); return 0; }},
      {"sft", "fine-tune on conversions with the curriculum prefix",
       [](const RunConfig& c) { revcurr::cli::cmd_sft(c, std::cout); return 0; }},
      {"eval", "rank the catalog for held-out conversions",
       [](const RunConfig& c) { revcurr::cli::cmd_eval(c, std::cout); return 0; }},
      {"ablate", "train and evaluate the ablation variants",
       [](const RunConfig& c) { revcurr::cli::cmd_ablate(c, std::cout); return 0; }},
      {"pipeline", "gen-data, fit-tokenizer, pretrain, sft and eval in order",
       [](const RunConfig& c) { revcurr::cli::cmd_pipeline(c, std::cout); return 0; }},
      {"verify", "recheck every artifact hash recorded in the manifest",
       [](const RunConfig& c) { return revcurr::cli::cmd_verify(c, std::cout).ok ? 0 : 3; }},
      {"show-config", "print the resolved config as JSON",
       [](const RunConfig& c) { std::cout << c.to_json().dump(2) << '\n'; return 0; }},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub);
    subs.emplace_back(sub, &cmd);
  }

  CLI11_PARSE(app, argc, argv);
  try {
    const RunConfig config = resolve(o);
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->run(config);
    }
  } catch (const revcurr::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const revcurr::PipelineError& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
