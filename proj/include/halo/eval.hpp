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
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/geometry.hpp"

namespace halo::pipeline {

inline constexpr std::size_t kRecallPositions = 40;

// IoU thresholds for Car, Pedestrian, Cyclist.
std::array<double, geo::kNumClasses> iou_thresholds(geo::Modality m);

struct PrecisionRecall {
  std::vector<std::pair<double, double>> points;  // (recall, precision) after each detection
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  std::size_t true_positives = 0;
};

// Greedy matching per scene in descending score order: a detection takes the
// unmatched same-class GT of highest IoU, and counts as a true positive when
// that IoU reaches `iou_threshold`.
PrecisionRecall precision_recall(std::span<const std::vector<geo::Detection>> dets,
                                 std::span<const std::vector<geo::Box3D>> gts,
                                 geo::ObjectClass cls, double iou_threshold);

// Mean over recall positions 1/40 .. 40/40 of the best precision at recall at
// least that high, in percent. nullopt when the class has no GT.
std::optional<double> interpolated_ap(const PrecisionRecall& pr);

std::optional<double> average_precision(std::span<const std::vector<geo::Detection>> dets,
                                        std::span<const std::vector<geo::Box3D>> gts,
                                        geo::ObjectClass cls, double iou_threshold);

struct ClassResult {
  std::optional<double> ap;
  double iou = 0.0;
  PrecisionRecall pr;
};

struct EvalReport {
  geo::Modality modality = geo::Modality::kLidar;
  std::map<geo::ObjectClass, ClassResult> classes;
  std::optional<double> map;  // mean over classes that have GT

  // {"modality":..,"classes":{"Car":{"ap":..,"iou":..,"num_gt":..,"num_det":..,
  //  "pr":[[r,p],..]},..},"map":..}
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate_detections(std::span<const std::vector<geo::Detection>> dets,
                               std::span<const std::vector<geo::Box3D>> gts,
                               geo::Modality modality);

}  // namespace halo::pipeline
