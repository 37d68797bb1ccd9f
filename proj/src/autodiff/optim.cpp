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

#include "halo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "halo/errors.hpp"

namespace halo::ad {

double OneCycleSchedule::lr_at(std::uint64_t step) const {
  const double start = peak_lr / div_factor;
  const double final_lr = start / final_div_factor;
  const double total = static_cast<double>(std::max<std::uint64_t>(total_steps, 1));
  const double warmup = warmup_fraction * total;
  const double t = std::min(static_cast<double>(step), total);
  if (t < warmup) return start + (peak_lr - start) * (t / warmup);
  const double span = total - warmup;
  const double frac = span > 0.0 ? (t - warmup) / span : 1.0;
  return final_lr + 0.5 * (peak_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

double optimizer_step(ParamStore& params, const Gradients& grads,
                      OptimizerState& state) {
  if (state.step == std::numeric_limits<std::uint64_t>::max()) {
    throw ContractError("optimizer step counter overflow");
  }
  const double lr = state.schedule.lr_at(state.step);
  const AdamConfig& cfg = state.adam;
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [path, g] : grads) {
    Tensor& p = params.get_mut(path);
    if (g.shape() != p.shape()) {
      throw DimensionError("gradient shape mismatch for " + path + ": " +
                           shape_str(g.shape()) + " vs " + shape_str(p.shape()));
    }
    auto mit = state.first_moment.try_emplace(path, Tensor::zeros(p.shape())).first;
    auto vit = state.second_moment.try_emplace(path, Tensor::zeros(p.shape())).first;
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * cfg.weight_decay * p[i];
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.check_finite(path.c_str());
  }
  ++state.step;
  return lr;
}

}  // namespace halo::ad
