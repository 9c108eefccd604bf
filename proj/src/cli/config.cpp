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

#include <fstream>
#include <functional>
#include <sstream>

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "revcurr/cli.hpp"
#include "revcurr/error.hpp"

namespace revcurr::cli {

namespace {

std::string hex(const unsigned char* digest, unsigned int len) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_text(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  return hex(digest, len);
}

std::size_t line_of(const YAML::Node& node) {
  return static_cast<std::size_t>(node.Mark().line) + 1;
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ParseError(key + ": expected a scalar", line_of(node));
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ParseError(key + ": cannot read '" + node.Scalar() + "'", line_of(node));
  }
}

template <typename T>
std::vector<T> sequence(const YAML::Node& node, const std::string& key) {
  if (!node.IsSequence()) throw ParseError(key + ": expected a list", line_of(node));
  std::vector<T> out;
  for (const auto& item : node) out.push_back(scalar<T>(item, key));
  return out;
}

void require(bool ok, const YAML::Node& node, const std::string& key,
             const std::string& what) {
  if (!ok) throw ParseError(key + ": " + what, line_of(node));
}

// One configurable key: how to print its current value and how to set it.
struct Field {
  std::string section;  // empty for top-level keys
  std::string key;
  std::string help;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const YAML::Node&, const std::string&)> set;
};

// Builds a Field for a plain scalar member reached through `ref`.
template <typename T>
Field scalar_field(std::string section, std::string key, std::string help,
                   std::function<T&(RunConfig&)> ref,
                   std::function<bool(const T&)> valid = nullptr,
                   std::string rule = "") {
  Field f{std::move(section), std::move(key), std::move(help), nullptr, nullptr};
  f.get = [ref](const RunConfig& c) {
    return nlohmann::json(ref(const_cast<RunConfig&>(c)));
  };
  f.set = [ref, valid, rule](RunConfig& c, const YAML::Node& n,
                             const std::string& name) {
    const T v = scalar<T>(n, name);
    if (valid) require(valid(v), n, name, rule);
    ref(c) = v;
  };
  return f;
}

template <typename T>
Field list_field(std::string section, std::string key, std::string help,
                 std::function<std::vector<T>&(RunConfig&)> ref,
                 std::function<bool(const T&)> valid = nullptr,
                 std::string rule = "") {
  Field f{std::move(section), std::move(key), std::move(help), nullptr, nullptr};
  f.get = [ref](const RunConfig& c) {
    return nlohmann::json(ref(const_cast<RunConfig&>(c)));
  };
  f.set = [ref, valid, rule](RunConfig& c, const YAML::Node& n,
                             const std::string& name) {
    auto v = sequence<T>(n, name);
    require(!v.empty(), n, name, "must not be empty");
    if (valid) {
      for (const T& x : v) require(valid(x), n, name, rule);
    }
    ref(c) = std::move(v);
  };
  return f;
}

const auto positive_int = [](const int& v) { return v >= 1; };
const auto non_negative_int = [](const int& v) { return v >= 0; };
const auto positive = [](const double& v) { return v > 0.0; };
const auto non_negative = [](const double& v) { return v >= 0.0; };
const auto probability = [](const double& v) { return v >= 0.0 && v <= 1.0; };

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using R = RunConfig;
    // Top level.
    f.push_back(scalar_field<std::uint64_t>(
        "", "seed", "global seed; stages derive named sub-seeds",
        [](R& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(scalar_field<std::string>(
        "", "out", "output directory", [](R& c) -> std::string& { return c.out; },
        [](const std::string& s) { return !s.empty(); }, "must not be empty"));

    // data
    f.push_back(scalar_field<std::string>(
        "data", "events", "event file (.tsv or .jsonl); empty = synthetic",
        [](R& c) -> std::string& { return c.data.events; }));
    f.push_back(scalar_field<std::string>(
        "data", "catalog", "catalog file for external events",
        [](R& c) -> std::string& { return c.data.catalog; }));
    f.push_back(scalar_field<int>(
        "data", "num_users", "synthetic users",
        [](R& c) -> int& { return c.data.synthetic.num_users; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "data", "num_items", "synthetic catalog size",
        [](R& c) -> int& { return c.data.synthetic.num_items; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "data", "num_categories", "synthetic categories",
        [](R& c) -> int& { return c.data.synthetic.num_categories; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<double>(
        "data", "conversion_rate", "target share of pay events",
        [](R& c) -> double& { return c.data.synthetic.conversion_rate; },
        [](const double& v) { return v > 0.0 && v < 1.0; }, "must be in (0, 1)"));
    f.push_back(scalar_field<int>(
        "data", "cluster_length", "same-category events before a conversion",
        [](R& c) -> int& { return c.data.synthetic.cluster_length; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<double>(
        "data", "coherence", "chance a conversion is preceded by a cluster",
        [](R& c) -> double& { return c.data.synthetic.coherence; }, probability,
        "must be in [0, 1]"));
    f.push_back(scalar_field<int>(
        "data", "events_per_user", "mean stream length",
        [](R& c) -> int& { return c.data.synthetic.events_per_user; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<int>(
        "data", "embedding_dim", "item embedding dimension",
        [](R& c) -> int& { return c.data.synthetic.embedding_dim; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<double>(
        "data", "stay_probability", "chance the category interest persists",
        [](R& c) -> double& { return c.data.synthetic.stay_probability; }, probability,
        "must be in [0, 1]"));
    f.push_back(scalar_field<double>(
        "data", "noise_probability", "chance of a noise event inside a cluster",
        [](R& c) -> double& { return c.data.synthetic.noise_probability; }, probability,
        "must be in [0, 1]"));
    f.push_back(scalar_field<double>(
        "data", "revisit_probability", "chance the purchase is a cluster item",
        [](R& c) -> double& { return c.data.synthetic.revisit_probability; }, probability,
        "must be in [0, 1]"));

    // tokenizer
    f.push_back(scalar_field<int>(
        "tokenizer", "levels", "tokens per item (L)",
        [](R& c) -> int& { return c.tokenizer.levels; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "tokenizer", "codebook_size", "centroids per semantic level",
        [](R& c) -> int& { return c.tokenizer.codebook_size; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<int>(
        "tokenizer", "kmeans_iterations", "Lloyd iterations per level",
        [](R& c) -> int& { return c.tokenizer.kmeans_iterations; }, positive_int,
        "must be >= 1"));

    // model
    f.push_back(scalar_field<int>(
        "model", "d", "hidden size", [](R& c) -> int& { return c.model.d; },
        positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "model", "encoder_layers", "encoder blocks",
        [](R& c) -> int& { return c.model.encoder_layers; }, non_negative_int,
        "must be >= 0"));
    f.push_back(scalar_field<int>(
        "model", "decoder_layers", "decoder blocks",
        [](R& c) -> int& { return c.model.decoder_layers; }, non_negative_int,
        "must be >= 0"));
    f.push_back(scalar_field<int>(
        "model", "heads", "attention heads", [](R& c) -> int& { return c.model.heads; },
        positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "model", "max_history", "history events kept (T)",
        [](R& c) -> int& { return c.model.max_history; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "model", "max_prefix_items", "largest curriculum size the decoder accepts",
        [](R& c) -> int& { return c.model.max_prefix_items; }, non_negative_int,
        "must be >= 0"));
    f.push_back(scalar_field<int>(
        "model", "ffn_multiplier", "feed-forward width / d",
        [](R& c) -> int& { return c.model.ffn_multiplier; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<double>(
        "model", "dropout", "dropout rate while training",
        [](R& c) -> double& { return c.model.dropout; },
        [](const double& v) { return v >= 0.0 && v < 1.0; }, "must be in [0, 1)"));

    // pretrain
    f.push_back(scalar_field<double>(
        "pretrain", "learning_rate", "Adam step size",
        [](R& c) -> double& { return c.pretrain.learning_rate; }, positive, "must be > 0"));
    f.push_back(scalar_field<int>(
        "pretrain", "batch_size", "examples per step",
        [](R& c) -> int& { return c.pretrain.batch_size; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "pretrain", "max_steps", "optimizer steps",
        [](R& c) -> int& { return c.pretrain.max_steps; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "pretrain", "eval_every", "steps between validation passes",
        [](R& c) -> int& { return c.pretrain.eval_every; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "pretrain", "valid_examples", "validation subset size (0 = all)",
        [](R& c) -> int& { return c.pretrain.valid_examples; }, non_negative_int,
        "must be >= 0"));
    f.push_back(scalar_field<double>(
        "pretrain", "clip_norm", "global gradient norm cap (0 = off)",
        [](R& c) -> double& { return c.pretrain.clip_norm; }, non_negative,
        "must be >= 0"));

    // sft
    f.push_back(scalar_field<int>(
        "sft", "k", "curriculum size", [](R& c) -> int& { return c.sft.k; },
        positive_int, "must be >= 1"));
    f.push_back(scalar_field<double>(
        "sft", "tau", "relevance softmax temperature",
        [](R& c) -> double& { return c.sft.tau; }, positive, "must be > 0"));
    f.push_back(scalar_field<double>(
        "sft", "lambda_qual", "weight of the quality hinge",
        [](R& c) -> double& { return c.sft.lambda_qual; }, non_negative, "must be >= 0"));
    f.push_back(scalar_field<double>(
        "sft", "margin", "required NLL reduction in nats/token",
        [](R& c) -> double& { return c.sft.margin; }, non_negative, "must be >= 0"));
    f.push_back(scalar_field<double>(
        "sft", "learning_rate", "Adam step size",
        [](R& c) -> double& { return c.sft.learning_rate; }, positive, "must be > 0"));
    f.push_back(scalar_field<int>(
        "sft", "batch_size", "examples per step",
        [](R& c) -> int& { return c.sft.batch_size; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "sft", "epochs", "passes over the conversion examples",
        [](R& c) -> int& { return c.sft.epochs; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "sft", "max_steps", "step cap (0 = none)",
        [](R& c) -> int& { return c.sft.max_steps; }, non_negative_int, "must be >= 0"));
    f.push_back(scalar_field<double>(
        "sft", "clip_norm", "global gradient norm cap (0 = off)",
        [](R& c) -> double& { return c.sft.clip_norm; }, non_negative, "must be >= 0"));
    {
      Field mode{"sft", "mode", "curriculum selection: learned, recent or none",
                 [](const R& c) { return nlohmann::json(curriculum_mode_name(c.sft.mode)); },
                 [](R& c, const YAML::Node& n, const std::string& name) {
                   const auto v = scalar<std::string>(n, name);
                   try {
                     c.sft.mode = curriculum_mode_from_name(v);
                   } catch (const Error&) {
                     throw ParseError(name + ": expected learned, recent or none",
                                      line_of(n));
                   }
                 }};
      f.push_back(std::move(mode));
    }
    f.push_back(scalar_field<bool>(
        "sft", "target_only", "weight only target tokens in the SFT term",
        [](R& c) -> bool& { return c.sft.target_only; }));

    // eval
    f.push_back(scalar_field<int>(
        "eval", "beam_width", "beams kept per level",
        [](R& c) -> int& { return c.eval.options.beam_width; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<int>(
        "eval", "top_n", "ranked list length",
        [](R& c) -> int& { return c.eval.options.top_n; }, positive_int, "must be >= 1"));
    f.push_back(scalar_field<int>(
        "eval", "batch_size", "histories decoded together",
        [](R& c) -> int& { return c.eval.options.batch_size; }, positive_int,
        "must be >= 1"));
    f.push_back(scalar_field<bool>(
        "eval", "inference_prefix", "teacher-force the curriculum at inference",
        [](R& c) -> bool& { return c.eval.options.inference_prefix; }));
    f.push_back(list_field<std::uint64_t>(
        "eval", "ablation_seeds", "seeds of each ablation variant",
        [](R& c) -> std::vector<std::uint64_t>& { return c.eval.ablation_seeds; }));
    f.push_back(list_field<std::string>(
        "eval", "ablation_variants", "full, no_rcpm, recent_k, no_quality",
        [](R& c) -> std::vector<std::string>& { return c.eval.ablation_variants; },
        [](const std::string& v) {
          return v == "full" || v == "no_rcpm" || v == "recent_k" || v == "no_quality";
        },
        "variants are full, no_rcpm, recent_k, no_quality"));
    f.push_back(list_field<int>(
        "eval", "k_sweep", "curriculum sizes for the sensitivity sweep",
        [](R& c) -> std::vector<int>& { return c.eval.k_sweep; }, positive_int,
        "entries must be >= 1"));
    return f;
  }();
  return table;
}

const std::vector<std::string> kSections{"data",     "tokenizer", "model",
                                         "pretrain", "sft",       "eval"};

void check_consistency(const RunConfig& c, const YAML::Node& root) {
  const auto at = [&](const char* section) {
    return root[section] ? line_of(root[section]) : std::size_t{1};
  };
  if (c.model.d % c.model.heads != 0) {
    throw ParseError("model.d must be divisible by model.heads", at("model"));
  }
  if (c.sft.k > c.model.max_prefix_items) {
    throw ParseError("sft.k exceeds model.max_prefix_items", at("sft"));
  }
  for (int k : c.eval.k_sweep) {
    if (k > c.model.max_prefix_items) {
      throw ParseError("eval.k_sweep entry exceeds model.max_prefix_items", at("eval"));
    }
  }
  if (c.eval.options.beam_width < c.eval.options.top_n) {
    throw ParseError("eval.beam_width must be >= eval.top_n", at("eval"));
  }
  if (!c.data.events.empty() && c.data.catalog.empty()) {
    throw ParseError("data.catalog is required with data.events", at("data"));
  }
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  const ModelConfig full = ModelConfig::full_scale();
  c.model.d = full.d;
  c.model.encoder_layers = full.encoder_layers;
  c.model.decoder_layers = full.decoder_layers;
  c.model.heads = full.heads;
  c.tokenizer.levels = 4;
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : kSections) j[s] = nlohmann::json::object();
  for (const Field& f : fields()) {
    if (f.section.empty()) {
      j[f.key] = f.get(*this);
    } else {
      j[f.section][f.key] = f.get(*this);
    }
  }
  return j;
}

std::string RunConfig::hash() const { return sha256_text(to_json().dump()); }

RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, static_cast<std::size_t>(e.mark.line) + 1);
  }
  RunConfig c = RunConfig::defaults();
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ParseError("config must be a mapping", line_of(root));

  const auto find = [](const std::string& section, const std::string& key) {
    for (const Field& f : fields()) {
      if (f.section == section && f.key == key) return &f;
    }
    return static_cast<const Field*>(nullptr);
  };
  for (const auto& entry : root) {
    const std::string name = entry.first.as<std::string>();
    const YAML::Node& value = entry.second;
    if (std::find(kSections.begin(), kSections.end(), name) != kSections.end()) {
      if (value.IsNull()) continue;
      if (!value.IsMap()) throw ParseError(name + ": expected a mapping", line_of(value));
      for (const auto& inner : value) {
        const std::string key = inner.first.as<std::string>();
        const Field* f = find(name, key);
        if (f == nullptr) {
          throw ParseError("unknown key '" + name + "." + key + "'",
                           line_of(inner.first));
        }
        f->set(c, inner.second, name + "." + key);
      }
      continue;
    }
    const Field* f = find("", name);
    if (f == nullptr) throw ParseError("unknown key '" + name + "'", line_of(entry.first));
    f->set(c, value, name);
  }
  check_consistency(c, root);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_run_config(buffer.str());
  } catch (const ParseError& e) {
    throw ParseError(e.detail(), e.line(), path.string());
  }
}

std::string describe_config_keys() {
  const RunConfig defaults = RunConfig::defaults();
  std::ostringstream out;
  std::string section = "\x01";
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out << (section.empty() ? "top level" : section) << ":\n";
    }
    out << "  " << f.key << " = " << f.get(defaults).dump() << "  (" << f.help << ")\n";
  }
  return out.str();
}

std::uint64_t sub_seed(std::uint64_t global, const std::string& stage) {
  // FNV-1a over the stage name, then a splitmix64 finalizer.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : stage) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::uint64_t z = global + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  return hex(digest, len);
}

}  // namespace revcurr::cli
