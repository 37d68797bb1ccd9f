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

#include "halo/instance.hpp"

#include <numeric>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

std::vector<geo::Vec3> CenteredPoints::shifted_positions() const {
  const Tensor& s = shifted.value();
  std::vector<geo::Vec3> out(s.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {s.at(i, 0), s.at(i, 1), s.at(i, 2)};
  return out;
}

std::size_t OffsetTargets::foreground_count() const {
  return static_cast<std::size_t>(std::accumulate(indicator.begin(), indicator.end(), 0));
}

ad::MlpSpec offset_head_spec(std::size_t in_dim, std::size_t hidden) {
  return ad::MlpSpec::make({in_dim, hidden, 3});
}

Var predict_offsets(Tape& tape, const ForegroundPoints& fg, const ad::MlpSpec& spec,
                    const ad::ParamStore& store, const std::string& prefix) {
  if (spec.out_dim() != 3) throw DimensionError(prefix + ": offset head must output 3 values");
  return ad::mlp_forward(tape, spec, store, prefix, fg.features);
}

CenteredPoints shift_points(Tape& tape, const ForegroundPoints& fg, Var offsets) {
  const std::size_t n = fg.size();
  if (offsets.shape() != ad::Shape{n, 3}) {
    throw DimensionError(fmt::format("shift_points: offsets {} for {} points",
                                     ad::shape_str(offsets.shape()), n));
  }
  std::vector<double> pos;
  pos.reserve(n * 3);
  for (const auto& p : fg.positions) pos.insert(pos.end(), p.begin(), p.end());
  CenteredPoints c;
  c.original = fg.positions;
  c.offsets = offsets;
  c.shifted = ad::add(tape.constant(Tensor({n, 3}, std::move(pos))), offsets);
  c.features = fg.features;
  return c;
}

OffsetTargets compute_offset_targets(std::span<const geo::Vec3> positions,
                                     std::span<const geo::Box3D> gts) {
  OffsetTargets t;
  for (const auto& p : positions) {
    const auto box = geo::containing_box(p, gts);
    t.box.push_back(box);
    if (box) {
      const auto& c = gts[*box].center;
      t.offsets.push_back({c[0] - p[0], c[1] - p[1], c[2] - p[2]});
      t.indicator.push_back(1);
    } else {
      t.offsets.push_back({0.0, 0.0, 0.0});
      t.indicator.push_back(0);
    }
  }
  return t;
}

Var offset_regression_loss(Var predicted, const OffsetTargets& targets) {
  const std::size_t n = targets.offsets.size();
  if (predicted.shape() != ad::Shape{n, 3}) {
    throw DimensionError(fmt::format("offset_regression_loss: predictions {} for {} targets",
                                     ad::shape_str(predicted.shape()), n));
  }
  Tape& tape = *predicted.tape();
  const std::size_t fg = targets.foreground_count();
  if (fg == 0) return tape.constant(Tensor::scalar(0.0));
  std::vector<double> tgt, weight;
  for (std::size_t i = 0; i < n; ++i) {
    tgt.insert(tgt.end(), targets.offsets[i].begin(), targets.offsets[i].end());
    weight.insert(weight.end(), 3, targets.indicator[i] ? 1.0 : 0.0);
  }
  Var diff = ad::sub(tape.constant(Tensor({n, 3}, std::move(tgt))), predicted);
  Var per = ad::mul(ad::smooth_l1(diff, kOffsetSmoothL1Delta),
                    tape.constant(Tensor({n, 3}, std::move(weight))));
  return ad::scale(ad::sum(per), 1.0 / static_cast<double>(fg));
}

InstanceFeatures aggregate_instances(Tape& tape, const CenteredPoints& centered,
                                     std::span<const double> scores, const SALayerConfig& cfg,
                                     const ad::ParamStore& store, const std::string& prefix) {
  const std::size_t n = centered.size();
  if (cfg.npoints > n) {
    throw ContractError(fmt::format("{}: npoints={} exceeds {} centered points", prefix,
                                    cfg.npoints, n));
  }
  InstanceFeatures out;
  if (cfg.npoints == n) {
    out.retained.resize(n);
    std::iota(out.retained.begin(), out.retained.end(), 0);
  } else if (cfg.sampling == SamplingMode::kCenterAware) {
    if (scores.size() != n) throw DimensionError(prefix + ": score count mismatch");
    out.retained = center_aware_sample(scores, cfg.npoints);
  } else {
    out.retained = geo::farthest_point_sampling(centered.shifted_positions(), cfg.npoints, 0);
  }
  out.features = sa_group_forward(tape, centered.shifted, centered.features, out.retained, cfg,
                                  store, prefix);
  out.positions = ad::gather_rows(centered.shifted, out.retained);
  return out;
}

}  // namespace halo::model
