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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halo/autodiff.hpp"
#include "halo/backbone.hpp"
#include "halo/geometry.hpp"
#include "halo/nn.hpp"

namespace halo::model {

// Foreground points after the offset shift t' = t + o.
struct CenteredPoints {
  std::vector<geo::Vec3> original;  // t
  ad::Var offsets;                  // N x 3, predicted
  ad::Var shifted;                  // N x 3, original + offsets
  ad::Var features;                 // N x D

  std::size_t size() const { return original.size(); }
  std::vector<geo::Vec3> shifted_positions() const;
};

struct OffsetTargets {
  std::vector<geo::Vec3> offsets;               // box center - position, zero on background
  std::vector<std::uint8_t> indicator;          // 1 when inside a box
  std::vector<std::optional<std::size_t>> box;  // assigned box index

  std::size_t foreground_count() const;
};

// MLP(D -> hidden -> 3) without an output activation.
ad::MlpSpec offset_head_spec(std::size_t in_dim, std::size_t hidden);

ad::Var predict_offsets(ad::Tape& tape, const ForegroundPoints& fg, const ad::MlpSpec& spec,
                        const ad::ParamStore& store, const std::string& prefix);

CenteredPoints shift_points(ad::Tape& tape, const ForegroundPoints& fg, ad::Var offsets);

// Each point inside a box is assigned to it (nearest center when boxes
// overlap) with target center - position.
OffsetTargets compute_offset_targets(std::span<const geo::Vec3> positions,
                                     std::span<const geo::Box3D> gts);

// Smooth-L1 transition used for offset regression (meters).
inline constexpr double kOffsetSmoothL1Delta = 1.0;

// (1 / sum I) * sum_i I_i * sum_xyz smoothL1(o_i - o~_i); 0 when no point is
// inside a box.
ad::Var offset_regression_loss(ad::Var predicted, const OffsetTargets& targets);

struct InstanceFeatures {
  std::vector<std::size_t> retained;  // indices into the centered points
  ad::Var positions;                  // M x 3 shifted positions of retained points
  ad::Var features;                   // M x cfg.fuse
};

// SA layer over the shifted positions. Retains every point when cfg.npoints
// equals the input count; otherwise selects by `scores` (center-aware) or by
// FPS over shifted positions.
InstanceFeatures aggregate_instances(ad::Tape& tape, const CenteredPoints& centered,
                                     std::span<const double> scores,
                                     const SALayerConfig& cfg, const ad::ParamStore& store,
                                     const std::string& prefix);

}  // namespace halo::model
