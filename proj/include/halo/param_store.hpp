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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "halo/tensor.hpp"

namespace halo::ad {

// Named parameter tensors plus the seed/counter used to initialize new ones.
// std::map keeps iteration lexicographic by path, which the optimizer and the
// checkpoint writer rely on for reproducible output.
class ParamStore {
 public:
  bool contains(const std::string& path) const;
  const Tensor& get(const std::string& path) const;
  Tensor& get_mut(const std::string& path);
  void set(const std::string& path, Tensor value);
  // Inserts only; throws ContractError if the path exists.
  void add(const std::string& path, Tensor value);
  void erase_prefix(const std::string& prefix);
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const;

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  std::uint64_t rng_state() const { return rng_state_; }
  void set_rng_state(std::uint64_t s) { rng_state_ = s; }
  // Returns the current state and advances it (splitmix64 step).
  std::uint64_t next_seed();

  bool operator==(const ParamStore& other) const = default;

 private:
  std::map<std::string, Tensor> params_;
  std::uint64_t rng_state_ = 0;
};

using Gradients = std::map<std::string, Tensor>;

}  // namespace halo::ad
