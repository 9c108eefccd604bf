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

#include <cmath>
#include <numeric>
#include <random>

#include "revcurr/error.hpp"
#include "revcurr/model.hpp"

namespace revcurr {

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d = 256;
  c.encoder_layers = 4;
  c.decoder_layers = 2;
  c.heads = 8;
  c.vocab_sizes = {256, 256, 256, 256};
  c.dropout = 0.1;
  return c;
}

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.vocab_sizes = {16, 16, 16, 16};
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("model: " + msg); };
  if (d < 1 || heads < 1) fail("d and heads must be >= 1");
  if (d % heads != 0) fail("d must be divisible by heads");
  if (encoder_layers < 1 || decoder_layers < 1) fail("need >= 1 layer each");
  if (levels < 1) fail("levels must be >= 1");
  if (static_cast<int>(vocab_sizes.size()) != levels) {
    fail("vocab_sizes needs one entry per level");
  }
  for (int v : vocab_sizes) {
    if (v < 1) fail("vocab sizes must be >= 1");
  }
  if (behaviors < kNumBehaviors) fail("behaviors must cover the 4 codes");
  if (max_history < 1 || max_prefix_items < 0) fail("bad history/prefix bounds");
  if (ffn_multiplier < 1) fail("ffn_multiplier must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (num_users < 0) fail("num_users must be >= 0");
}

int ModelConfig::total_vocab() const {
  return std::accumulate(vocab_sizes.begin(), vocab_sizes.end(), 0);
}

int ModelConfig::vocab_offset(int level) const {
  return std::accumulate(vocab_sizes.begin(), vocab_sizes.begin() + level, 0);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"heads", heads},
          {"levels", levels},
          {"vocab_sizes", vocab_sizes},
          {"behaviors", behaviors},
          {"max_history", max_history},
          {"max_prefix_items", max_prefix_items},
          {"ffn_multiplier", ffn_multiplier},
          {"dropout", dropout},
          {"num_users", num_users}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.levels = j.at("levels").get<int>();
  c.vocab_sizes = j.at("vocab_sizes").get<std::vector<int>>();
  c.behaviors = j.at("behaviors").get<int>();
  c.max_history = j.at("max_history").get<int>();
  c.max_prefix_items = j.at("max_prefix_items").get<int>();
  c.ffn_multiplier = j.at("ffn_multiplier").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.num_users = j.at("num_users").get<int>();
  c.validate();
  return c;
}

namespace {

enum class Init { kNormal, kZero, kOne };

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  Init init;
};

void add_linear(std::vector<ParamSpec>& specs, const std::string& name,
                std::size_t in, std::size_t out) {
  specs.push_back({name + ".w", {in, out}, Init::kNormal});
  specs.push_back({name + ".b", {1, out}, Init::kZero});
}

void add_norm(std::vector<ParamSpec>& specs, const std::string& name,
              std::size_t d) {
  specs.push_back({name + ".gamma", {1, d}, Init::kOne});
  specs.push_back({name + ".beta", {1, d}, Init::kZero});
}

void add_attention(std::vector<ParamSpec>& specs, const std::string& name,
                   std::size_t d) {
  for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(specs, name + p, d, d);
}

std::vector<ParamSpec> layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d);
  const auto ffn = d * static_cast<std::size_t>(c.ffn_multiplier);
  const auto L = static_cast<std::size_t>(c.levels);
  std::vector<ParamSpec> specs;
  specs.push_back({"tok_emb", {static_cast<std::size_t>(c.total_vocab()), d},
                   Init::kNormal});
  specs.push_back({"beh_emb", {static_cast<std::size_t>(c.behaviors), d},
                   Init::kNormal});
  specs.push_back({"enc_pos", {static_cast<std::size_t>(c.max_history) * L, d},
                   Init::kNormal});
  specs.push_back({"dec_pos",
                   {static_cast<std::size_t>(c.max_decoder_length()), d},
                   Init::kNormal});
  specs.push_back({"bos", {1, d}, Init::kNormal});
  for (int i = 0; i < c.encoder_layers; ++i) {
    const std::string p = "enc" + std::to_string(i);
    add_norm(specs, p + ".ln1", d);
    add_attention(specs, p + ".attn", d);
    add_norm(specs, p + ".ln2", d);
    add_linear(specs, p + ".ffn1", d, ffn);
    add_linear(specs, p + ".ffn2", ffn, d);
  }
  add_norm(specs, "enc.lnf", d);
  for (int i = 0; i < c.decoder_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    add_norm(specs, p + ".ln1", d);
    add_attention(specs, p + ".self", d);
    add_norm(specs, p + ".ln2", d);
    add_attention(specs, p + ".cross", d);
    add_norm(specs, p + ".ln3", d);
    add_linear(specs, p + ".ffn1", d, ffn);
    add_linear(specs, p + ".ffn2", ffn, d);
  }
  add_norm(specs, "dec.lnf", d);
  for (int l = 0; l < c.levels; ++l) {
    add_linear(specs, "head" + std::to_string(l), d,
               static_cast<std::size_t>(c.vocab_sizes[l]));
  }
  specs.push_back({"rcpm.user", {static_cast<std::size_t>(c.num_users) + 1, d},
                   Init::kNormal});
  add_linear(specs, "rcpm.mlp1", 2 * d, d);
  add_linear(specs, "rcpm.mlp2", d, d);
  return specs;
}

ad::Tensor make_tensor(const ParamSpec& spec, std::mt19937_64& rng,
                       double init_std) {
  switch (spec.init) {
    case Init::kZero:
      return ad::Tensor(spec.shape, 0.0);
    case Init::kOne:
      return ad::Tensor(spec.shape, 1.0);
    case Init::kNormal:
      break;
  }
  std::normal_distribution<double> normal(0.0, init_std);
  ad::Tensor t(spec.shape);
  for (double& v : t.storage()) v = normal(rng);
  return t;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed,
                              double init_std) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const ParamSpec& spec : layout(config)) {
    params.vars_[spec.name] =
        ad::Var::parameter(make_tensor(spec, rng, init_std));
  }
  return params;
}

const ad::Var& ModelParams::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LookupError("no parameter named " + name);
  return it->second;
}

ad::Var& ModelParams::at(const std::string& name) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LookupError("no parameter named " + name);
  return it->second;
}

void ModelParams::set(const std::string& name, ad::Tensor value) {
  vars_[name] = ad::Var::parameter(std::move(value));
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, var] : vars_) {
    out.vars_[name] = ad::Var::parameter(var.value());
  }
  return out;
}

void ModelParams::zero_grad() {
  for (auto& [name, var] : vars_) var.zero_grad();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, var] : vars_) n += var.value().size();
  return n;
}

bool ModelParams::is_curriculum_param(const std::string& name) {
  return name.rfind("rcpm.", 0) == 0;
}

void ModelParams::reinit_curriculum_params(std::uint64_t seed,
                                           double init_std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& [name, var] : vars_) {
    if (!is_curriculum_param(name)) continue;
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    for (double& v : var.mutable_value().storage()) v = bias ? 0.0 : normal(rng);
  }
}

}  // namespace revcurr
