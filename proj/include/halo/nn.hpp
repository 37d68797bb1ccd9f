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

#include <cstddef>
#include <string>
#include <vector>

#include "halo/autodiff.hpp"

namespace halo::ad {

enum class Activation { kNone, kRelu };

// Layer widths of a fully connected stack, e.g. MLP(256 -> 128 -> 3) is
// dims = {256, 128, 3} with two affine layers.
struct MlpSpec {
  std::vector<std::size_t> dims;
  std::vector<Activation> activations;  // one per affine layer

  // Hidden layers use relu; the last layer uses relu only if final_relu.
  static MlpSpec make(std::vector<std::size_t> dims, bool final_relu = false);

  std::size_t num_layers() const { return dims.size() - 1; }
  std::size_t in_dim() const { return dims.front(); }
  std::size_t out_dim() const { return dims.back(); }
  void validate() const;
};

std::string weight_path(const std::string& prefix, std::size_t layer);
std::string bias_path(const std::string& prefix, std::size_t layer);

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)) and zero biases,
// drawn from a stream seeded by store.next_seed().
void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec);

// input: N x dims[0]. Each layer computes x * W + b followed by its
// activation.
Var mlp_forward(Tape& tape, const MlpSpec& spec, const ParamStore& store,
                const std::string& prefix, Var input);

}  // namespace halo::ad
