// Copyright 2026 The Halo Authors. All Rights Reserved.
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

#include "halo/param_store.hpp"

#include "halo/errors.hpp"

namespace halo::ad {

bool ParamStore::contains(const std::string& path) const {
  return params_.count(path) != 0;
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ContractError("unknown parameter: " + path);
  return it->second;
}

Tensor& ParamStore::get_mut(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ContractError("unknown parameter: " + path);
  return it->second;
}

void ParamStore::set(const std::string& path, Tensor value) {
  params_[path] = std::move(value);
}

void ParamStore::add(const std::string& path, Tensor value) {
  if (!params_.emplace(path, std::move(value)).second) {
    throw ContractError("duplicate parameter path: " + path);
  }
}

void ParamStore::erase_prefix(const std::string& prefix) {
  for (auto it = params_.lower_bound(prefix);
       it != params_.end() && it->first.compare(0, prefix.size(), prefix) == 0;) {
    it = params_.erase(it);
  }
}

std::vector<std::string> ParamStore::paths_with_prefix(
    const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = params_.lower_bound(prefix);
       it != params_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it) {
    out.push_back(it->first);
  }
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_) n += t.size();
  return n;
}

std::uint64_t ParamStore::next_seed() {
  const std::uint64_t current = rng_state_;
  std::uint64_t z = (rng_state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return current ^ z;
}

}  // namespace halo::ad
