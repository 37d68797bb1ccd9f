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
#include <functional>

#include "halo/autodiff.hpp"

namespace halo::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the left and right one-sided slopes disagree, i.e. the
  // probe straddles a kink (relu at 0, smooth-L1 transition, a discrete
  // selection flipping). These are skipped.
  std::size_t excluded = 0;
};

// Relative error |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

using ScalarFn = std::function<Var(Tape&, Var)>;

// Compares the reverse-mode gradient of fn at `point` against central
// differences with step eps, coordinate by coordinate.
GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& point,
                                  double eps = 1e-5);

using LossFn = std::function<Var(Tape&, const ParamStore&)>;

// Same check over the parameters of `store`. When the store holds more than
// max_coords scalars, an evenly strided subset of coordinates is probed.
GradCheckResult finite_diff_check_params(const LossFn& fn, ParamStore store,
                                         double eps = 1e-5,
                                         std::size_t max_coords = 0);

}  // namespace halo::ad
