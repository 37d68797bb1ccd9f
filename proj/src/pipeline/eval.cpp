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

#include "halo/eval.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::pipeline {

std::array<double, geo::kNumClasses> iou_thresholds(geo::Modality m) {
  if (m == geo::Modality::kLidar) return {0.7, 0.5, 0.5};
  return {0.5, 0.25, 0.25};
}

PrecisionRecall precision_recall(std::span<const std::vector<geo::Detection>> dets,
                                 std::span<const std::vector<geo::Box3D>> gts,
                                 geo::ObjectClass cls, double iou_threshold) {
  if (dets.size() != gts.size()) {
    throw DimensionError(fmt::format("precision_recall: {} detection lists for {} scenes",
                                     dets.size(), gts.size()));
  }
  PrecisionRecall pr;
  std::vector<std::vector<bool>> taken(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) {
    taken[s].assign(gts[s].size(), false);
    for (const auto& b : gts[s]) pr.num_gt += b.label == cls;
  }
  // (score, scene, index) in descending score; ties by scene then index.
  std::vector<std::tuple<double, std::size_t, std::size_t>> order;
  for (std::size_t s = 0; s < dets.size(); ++s) {
    for (std::size_t i = 0; i < dets[s].size(); ++i) {
      if (dets[s][i].box.label == cls) order.emplace_back(dets[s][i].score, s, i);
    }
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  pr.num_det = order.size();
  for (const auto& [score, s, i] : order) {
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts[s].size(); ++g) {
      if (taken[s][g] || gts[s][g].label != cls) continue;
      const double iou = geo::rotated_iou_3d(dets[s][i].box, gts[s][g]);
      if (iou > best) best = iou, best_gt = g;
    }
    if (best_gt && best >= iou_threshold) {
      taken[s][*best_gt] = true;
      ++pr.true_positives;
    }
    const double seen = static_cast<double>(pr.points.size() + 1);
    const double tp = static_cast<double>(pr.true_positives);
    const double recall = pr.num_gt == 0 ? 0.0 : tp / static_cast<double>(pr.num_gt);
    pr.points.emplace_back(recall, tp / seen);
  }
  return pr;
}

std::optional<double> interpolated_ap(const PrecisionRecall& pr) {
  if (pr.num_gt == 0) return std::nullopt;
  double total = 0.0;
  for (std::size_t k = 1; k <= kRecallPositions; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(kRecallPositions);
    double best = 0.0;
    for (const auto& [recall, precision] : pr.points) {
      // Slack absorbs rounding in tp / num_gt.
      if (recall + 1e-12 >= r) best = std::max(best, precision);
    }
    total += best;
  }
  return 100.0 * total / static_cast<double>(kRecallPositions);
}

std::optional<double> average_precision(std::span<const std::vector<geo::Detection>> dets,
                                        std::span<const std::vector<geo::Box3D>> gts,
                                        geo::ObjectClass cls, double iou_threshold) {
  return interpolated_ap(precision_recall(dets, gts, cls, iou_threshold));
}

EvalReport evaluate_detections(std::span<const std::vector<geo::Detection>> dets,
                               std::span<const std::vector<geo::Box3D>> gts,
                               geo::Modality modality) {
  EvalReport rep;
  rep.modality = modality;
  const auto thr = iou_thresholds(modality);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < geo::kNumClasses; ++c) {
    const auto cls = static_cast<geo::ObjectClass>(c);
    ClassResult r;
    r.iou = thr[c];
    r.pr = precision_recall(dets, gts, cls, thr[c]);
    r.ap = interpolated_ap(r.pr);
    if (r.ap) {
      sum += *r.ap;
      ++present;
    }
    rep.classes[cls] = std::move(r);
  }
  if (present > 0) rep.map = sum / static_cast<double>(present);
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cls = nlohmann::json::object();
  for (const auto& [c, r] : classes) {
    nlohmann::json pr = nlohmann::json::array();
    for (const auto& [recall, precision] : r.pr.points) pr.push_back({recall, precision});
    cls[geo::class_name(c)] = {{"ap", r.ap ? nlohmann::json(*r.ap) : nlohmann::json(nullptr)},
                               {"iou", r.iou},
                               {"num_gt", r.pr.num_gt},
                               {"num_det", r.pr.num_det},
                               {"true_positives", r.pr.true_positives},
                               {"pr", pr}};
  }
  return {{"modality", geo::to_string(modality)},
          {"classes", cls},
          {"map", map ? nlohmann::json(*map) : nlohmann::json(nullptr)}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport rep;
  try {
    rep.modality = geo::modality_from_string(j.at("modality").get<std::string>());
    for (const auto& [name, v] : j.at("classes").items()) {
      ClassResult r;
      if (!v.at("ap").is_null()) r.ap = v.at("ap").get<double>();
      r.iou = v.at("iou").get<double>();
      r.pr.num_gt = v.at("num_gt").get<std::size_t>();
      r.pr.num_det = v.at("num_det").get<std::size_t>();
      r.pr.true_positives = v.value("true_positives", std::size_t{0});
      for (const auto& p : v.at("pr")) {
        r.pr.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      }
      rep.classes[geo::class_from_name(name)] = std::move(r);
    }
    if (!j.at("map").is_null()) rep.map = j.at("map").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("eval report: {}", e.what()));
  }
  return rep;
}

}  // namespace halo::pipeline
