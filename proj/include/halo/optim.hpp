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

#include "halo/param_store.hpp"
#include "halo/tensor.hpp"

namespace halo::ad {

// Linear warmup from peak/div_factor to peak over the first warmup_fraction
// of the run, then cosine annealing down to peak/(div_factor *
// final_div_factor). Steps past total_steps stay at the final value.
struct OneCycleSchedule {
  double peak_lr = 0.01;
  std::uint64_t total_steps = 1;
  double warmup_fraction = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  double lr_at(std::uint64_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;  // "momentum"
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

struct OptimizerState {
  OneCycleSchedule schedule;
  AdamConfig adam;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;
};

// One AdamW step over every parameter that has an entry in `grads`;
// parameters without one are left untouched (frozen). Returns the learning
// rate used.
double optimizer_step(ParamStore& params, const Gradients& grads,
                      OptimizerState& state);

}  // namespace halo::ad
