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

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/autodiff.hpp"
#include "halo/geometry.hpp"
#include "halo/instance.hpp"
#include "halo/nn.hpp"

namespace halo::model {

inline constexpr std::size_t kNumYawBins = 12;
// center residual (3), log size (3), yaw bin logits (12), yaw bin residuals (12)
inline constexpr std::size_t kBoxCodeSize = 6 + 2 * kNumYawBins;
inline constexpr std::size_t kYawLogitOffset = 6;
inline constexpr std::size_t kYawResidualOffset = 6 + kNumYawBins;

using BoxEncoding = std::array<double, kBoxCodeSize>;

double yaw_bin_width();
// Bin of a yaw in (-pi, pi]; pi itself falls into the last bin.
std::size_t yaw_bin(double yaw);
double yaw_bin_center(std::size_t bin);

// The bin logits hold a one-hot vector; the residual slot of the target bin
// holds (yaw - bin center) / half bin width, the other slots 0.
BoxEncoding encode_box(const geo::Box3D& gt, const geo::Vec3& anchor);
// Uses the argmax bin; the yaw is renormalized into (-pi, pi].
geo::Box3D decode_box(std::span<const double> enc, const geo::Vec3& anchor,
                      geo::ObjectClass label);

// Two independent branches on the same input: cls -> 3 logits, reg -> 30.
struct HeadConfig {
  std::size_t in_dim = 0;
  std::vector<std::size_t> hidden = {256, 256};

  ad::MlpSpec cls_spec() const;
  ad::MlpSpec reg_spec() const;
  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

struct HeadOutput {
  ad::Var cls_logits;  // N x 3; background is an implicit zero logit
  ad::Var reg;         // N x 30
};

void init_head(ad::ParamStore& store, const std::string& prefix, const HeadConfig& cfg);

HeadOutput head_forward(ad::Tape& tape, ad::Var input, const HeadConfig& cfg,
                        const ad::ParamStore& store, const std::string& prefix);

// CAT(instance, hallucinated); without hallucinated features the slot is
// zero-filled to `hallucinated_dim` columns.
ad::Var head_input(ad::Tape& tape, ad::Var instance, std::optional<ad::Var> hallucinated,
                   std::size_t hallucinated_dim);

struct AssignedTargets {
  std::vector<std::optional<geo::ObjectClass>> cls;  // nullopt = background
  std::vector<std::optional<BoxEncoding>> reg;       // set iff cls is set

  std::size_t size() const { return cls.size(); }
  std::size_t foreground_count() const;
};

// Class and box come from the box assigned to each point's original position
// (the offset targets); the regression anchor is the point's shifted position.
AssignedTargets assign_targets(const OffsetTargets& offsets,
                               std::span<const std::size_t> retained,
                               std::span<const geo::Vec3> anchors,
                               std::span<const geo::Box3D> gts);

inline constexpr double kBoxSmoothL1Delta = 1.0;

struct DetectionLoss {
  ad::Var total;  // ref + cls
  ad::Var cls;
  ad::Var ref;
};

// L_cls: mean 4-way cross-entropy over all points. L_ref: mean over
// foreground points of smoothL1(center, log size) + CE(yaw bin) +
// smoothL1(target-bin yaw residual); 0 without foreground points.
DetectionLoss detection_loss(const HeadOutput& preds, const AssignedTargets& targets);

// Class index 0..2 and the 4-way softmax probability of the best class.
struct ClassScore {
  geo::ObjectClass label;
  double score;
};
ClassScore best_class(std::span<const double> logits);

// [{"class":..,"score":..,"center":[..],"size":[..],"yaw":..}, ...]
nlohmann::json detections_to_json(std::span<const geo::Detection> dets);
std::vector<geo::Detection> detections_from_json(const nlohmann::json& j);

}  // namespace halo::model
