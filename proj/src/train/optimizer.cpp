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

#include "revcurr/error.hpp"
#include "revcurr/train.hpp"

namespace revcurr {

double Adam::step(ModelParams& params) {
  double norm2 = 0.0;
  for (const auto& [name, var] : params.vars()) {
    if (!var.has_grad()) continue;
    for (double g : var.grad().values()) norm2 += g * g;
  }
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) {
    throw DivergenceError("optimizer: non-finite gradient norm at step " +
                          std::to_string(steps_ + 1));
  }
  const double clip = options_.clip_norm > 0.0 && norm > options_.clip_norm
                          ? options_.clip_norm / norm
                          : 1.0;
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = options_.learning_rate;
  for (const auto& [name, var] : params.vars()) {
    if (!var.has_grad()) continue;
    ad::Var& p = params.at(name);
    auto [mit, fresh] = m_.try_emplace(name, p.shape());
    if (fresh) v_.try_emplace(name, p.shape());
    double* m = mit->second.data();
    double* v = v_.at(name).data();
    double* x = p.mutable_value().data();
    const double* g = p.grad().data();
    const std::size_t n = p.value().size();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i] * clip;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
  return norm;
}

void Adam::save(std::map<std::string, ad::Tensor>& arrays) const {
  for (const auto& [name, t] : m_) arrays["adam.m/" + name] = t;
  for (const auto& [name, t] : v_) arrays["adam.v/" + name] = t;
}

void Adam::load(const std::map<std::string, ad::Tensor>& arrays, long steps) {
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : arrays) {
    if (name.rfind("adam.m/", 0) == 0) m_[name.substr(7)] = t;
    if (name.rfind("adam.v/", 0) == 0) v_[name.substr(7)] = t;
  }
  steps_ = steps;
}

}  // namespace revcurr
