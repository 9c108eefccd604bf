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

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "revcurr/error.hpp"
#include "revcurr/model.hpp"

namespace revcurr {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated checkpoint " + path);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get<std::uint64_t>(in, path);
  if (n > (1ull << 32)) throw InputError("corrupt checkpoint " + path);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw InputError("truncated checkpoint " + path);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  nlohmann::json header{{"config", ckpt.config.to_json()},
                        {"stage", ckpt.stage},
                        {"metadata", ckpt.metadata}};
  put_string(out, header.dump());
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& [name, t] : ckpt.arrays) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + p);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InputError(p + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, p);
  if (version != kVersion) {
    throw InputError(p + ": unsupported checkpoint version " +
                     std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header = nlohmann::json::parse(get_string(in, p));
  ckpt.config = ModelConfig::from_json(header.at("config"));
  ckpt.stage = header.at("stage").get<std::string>();
  ckpt.metadata = header.at("metadata");
  const auto count = get<std::uint64_t>(in, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, p);
    const auto rank = get<std::uint32_t>(in, p);
    if (rank == 0 || rank > 8) throw InputError("corrupt checkpoint " + p);
    ad::Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, p);
    ad::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint " + p);
    ckpt.arrays.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

ModelParams params_from_arrays(const std::map<std::string, ad::Tensor>& arrays,
                               const std::string& prefix) {
  ModelParams params;
  for (const auto& [name, t] : arrays) {
    if (name.rfind(prefix, 0) != 0) continue;
    params.set(name.substr(prefix.size()), t);
  }
  return params;
}

void params_to_arrays(const ModelParams& params,
                      std::map<std::string, ad::Tensor>& arrays,
                      const std::string& prefix) {
  for (const auto& [name, var] : params.vars()) {
    arrays[prefix + name] = var.value();
  }
}

std::string hash_params(const ModelParams& params) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& [name, var] : params.vars()) {
    EVP_DigestUpdate(ctx, name.data(), name.size() + 1);
    for (std::size_t d : var.shape()) {
      const std::uint64_t v = d;
      EVP_DigestUpdate(ctx, &v, sizeof(v));
    }
    EVP_DigestUpdate(ctx, var.value().data(),
                     var.value().size() * sizeof(double));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0')
        << static_cast<int>(digest[i]);
  }
  return hex.str();
}

}  // namespace revcurr
