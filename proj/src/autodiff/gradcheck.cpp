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

#include "halo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace halo::ad {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

double evaluate(const LossFn& fn, const ParamStore& store) {
  Tape tape(false);
  return fn(tape, store).value().item();
}

// Left and right one-sided slopes disagree well beyond curvature effects.
bool straddles_kink(double f_plus, double f_0, double f_minus, double eps) {
  const double right = (f_plus - f_0) / eps;
  const double left = (f_0 - f_minus) / eps;
  return std::abs(right - left) >
         1e-3 * std::max({1.0, std::abs(right), std::abs(left)});
}

}  // namespace

GradCheckResult finite_diff_check_params(const LossFn& fn, ParamStore store,
                                         double eps, std::size_t max_coords) {
  Gradients analytic;
  double f_0 = 0.0;
  {
    Tape tape;
    Var loss = fn(tape, store);
    f_0 = loss.value().item();
    analytic = tape.backward(loss, store);
  }
  struct Coord {
    std::string path;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& [path, t] : store.all()) {
    for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({path, i});
  }
  std::size_t stride = 1;
  if (max_coords > 0 && coords.size() > max_coords) {
    stride = (coords.size() + max_coords - 1) / max_coords;
  }

  GradCheckResult result;
  for (std::size_t c = 0; c < coords.size(); c += stride) {
    Tensor& t = store.get_mut(coords[c].path);
    const std::size_t i = coords[c].index;
    const double orig = t[i];
    t[i] = orig + eps;
    const double f_plus = evaluate(fn, store);
    t[i] = orig - eps;
    const double f_minus = evaluate(fn, store);
    t[i] = orig;
    if (straddles_kink(f_plus, f_0, f_minus, eps)) {
      ++result.excluded;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double err = relative_error(analytic.at(coords[c].path)[i], numeric);
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.checked;
  }
  return result;
}

GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& point,
                                  double eps) {
  ParamStore store;
  store.add("x", point);
  return finite_diff_check_params(
      [&fn](Tape& tape, const ParamStore& s) { return fn(tape, tape.parameter(s, "x")); },
      std::move(store), eps);
}

}  // namespace halo::ad
