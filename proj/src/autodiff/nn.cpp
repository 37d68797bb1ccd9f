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

#include "halo/nn.hpp"

#include <cmath>

#include <fmt/format.h>

#include "halo/errors.hpp"
#include "halo/random.hpp"

namespace halo::ad {

MlpSpec MlpSpec::make(std::vector<std::size_t> dims, bool final_relu) {
  MlpSpec spec;
  spec.dims = std::move(dims);
  if (spec.dims.size() < 2) throw ContractError("MlpSpec needs at least two widths");
  spec.activations.assign(spec.dims.size() - 1, Activation::kRelu);
  if (!final_relu) spec.activations.back() = Activation::kNone;
  return spec;
}

void MlpSpec::validate() const {
  if (dims.size() < 2) throw ContractError("MlpSpec needs at least two widths");
  if (activations.size() != dims.size() - 1) {
    throw ContractError(fmt::format("MlpSpec has {} layers but {} activations",
                                    dims.size() - 1, activations.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ContractError("MlpSpec widths must be positive");
  }
}

std::string weight_path(const std::string& prefix, std::size_t layer) {
  return fmt::format("{}/layer{}/weight", prefix, layer);
}

std::string bias_path(const std::string& prefix, std::size_t layer) {
  return fmt::format("{}/layer{}/bias", prefix, layer);
}

void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec) {
  spec.validate();
  Rng rng(store.next_seed());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.dims[l], fan_out = spec.dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    store.add(weight_path(prefix, l), Tensor::matrix(fan_in, fan_out, std::move(w)));
    store.add(bias_path(prefix, l), Tensor::zeros({fan_out}));
  }
}

Var mlp_forward(Tape& tape, const MlpSpec& spec, const ParamStore& store,
                const std::string& prefix, Var input) {
  spec.validate();
  Var x = input;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    if (x.value().rank() != 2 || x.value().cols() != spec.dims[l]) {
      throw DimensionError(fmt::format("{}: layer {} expects width {}, input is {}",
                                       prefix, l, spec.dims[l], shape_str(x.shape())));
    }
    Var w = tape.parameter(store, weight_path(prefix, l));
    Var b = tape.parameter(store, bias_path(prefix, l));
    if (w.shape() != Shape{spec.dims[l], spec.dims[l + 1]} ||
        b.shape() != Shape{spec.dims[l + 1]}) {
      throw DimensionError(fmt::format("{}: layer {} parameters have shape {} / {}",
                                       prefix, l, shape_str(w.shape()),
                                       shape_str(b.shape())));
    }
    x = add_bias(matmul(x, w), b);
    if (spec.activations[l] == Activation::kRelu) x = relu(x);
  }
  return x;
}

}  // namespace halo::ad
