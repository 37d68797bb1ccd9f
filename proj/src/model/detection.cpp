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

#include "halo/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

double yaw_bin_width() { return 2.0 * std::numbers::pi / static_cast<double>(kNumYawBins); }

std::size_t yaw_bin(double yaw) {
  const double b = std::floor((yaw + std::numbers::pi) / yaw_bin_width());
  return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(kNumYawBins - 1)));
}

double yaw_bin_center(std::size_t bin) {
  return -std::numbers::pi + (static_cast<double>(bin) + 0.5) * yaw_bin_width();
}

BoxEncoding encode_box(const geo::Box3D& gt, const geo::Vec3& anchor) {
  gt.validate();
  BoxEncoding e{};
  for (std::size_t k = 0; k < 3; ++k) {
    e[k] = gt.center[k] - anchor[k];
    e[3 + k] = std::log(gt.size[k]);
  }
  const double yaw = geo::normalize_yaw(gt.yaw);
  const std::size_t bin = yaw_bin(yaw);
  e[kYawLogitOffset + bin] = 1.0;
  e[kYawResidualOffset + bin] = (yaw - yaw_bin_center(bin)) / (0.5 * yaw_bin_width());
  return e;
}

geo::Box3D decode_box(std::span<const double> enc, const geo::Vec3& anchor,
                      geo::ObjectClass label) {
  if (enc.size() != kBoxCodeSize) {
    throw DimensionError(fmt::format("decode_box: expected {} values, got {}", kBoxCodeSize,
                                     enc.size()));
  }
  geo::Box3D b;
  for (std::size_t k = 0; k < 3; ++k) {
    b.center[k] = anchor[k] + enc[k];
    b.size[k] = std::exp(enc[3 + k]);
  }
  const auto logits = enc.subspan(kYawLogitOffset, kNumYawBins);
  const std::size_t bin =
      static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  b.yaw = geo::normalize_yaw(yaw_bin_center(bin) +
                             enc[kYawResidualOffset + bin] * 0.5 * yaw_bin_width());
  b.label = label;
  return b;
}

ad::MlpSpec HeadConfig::cls_spec() const {
  std::vector<std::size_t> dims = {in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(geo::kNumClasses);
  return ad::MlpSpec::make(dims);
}

ad::MlpSpec HeadConfig::reg_spec() const {
  std::vector<std::size_t> dims = {in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(kBoxCodeSize);
  return ad::MlpSpec::make(dims);
}

nlohmann::json HeadConfig::to_json() const { return {{"in_dim", in_dim}, {"hidden", hidden}}; }

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  try {
    c.in_dim = j.at("in_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("head config: {}", e.what()));
  }
  if (c.in_dim == 0) throw ConfigError("head config: in_dim must be positive");
  return c;
}

void init_head(ad::ParamStore& store, const std::string& prefix, const HeadConfig& cfg) {
  ad::init_mlp(store, prefix + "/cls", cfg.cls_spec());
  ad::init_mlp(store, prefix + "/reg", cfg.reg_spec());
}

HeadOutput head_forward(Tape& tape, Var input, const HeadConfig& cfg,
                        const ad::ParamStore& store, const std::string& prefix) {
  if (input.shape().size() != 2 || input.shape()[1] != cfg.in_dim) {
    throw DimensionError(fmt::format("{}: expected input width {}, got {}", prefix, cfg.in_dim,
                                     ad::shape_str(input.shape())));
  }
  return {ad::mlp_forward(tape, cfg.cls_spec(), store, prefix + "/cls", input),
          ad::mlp_forward(tape, cfg.reg_spec(), store, prefix + "/reg", input)};
}

Var head_input(Tape& tape, Var instance, std::optional<Var> hallucinated,
               std::size_t hallucinated_dim) {
  const std::size_t n = instance.shape()[0];
  if (!hallucinated) {
    return ad::concat_cols({instance, tape.constant(Tensor::zeros({n, hallucinated_dim}))});
  }
  if (hallucinated->shape() != ad::Shape{n, hallucinated_dim}) {
    throw DimensionError(fmt::format("head_input: hallucinated features {} for {} rows of width {}",
                                     ad::shape_str(hallucinated->shape()), n, hallucinated_dim));
  }
  return ad::concat_cols({instance, *hallucinated});
}

std::size_t AssignedTargets::foreground_count() const {
  return static_cast<std::size_t>(
      std::count_if(cls.begin(), cls.end(), [](const auto& c) { return c.has_value(); }));
}

AssignedTargets assign_targets(const OffsetTargets& offsets, std::span<const std::size_t> retained,
                               std::span<const geo::Vec3> anchors,
                               std::span<const geo::Box3D> gts) {
  if (retained.size() != anchors.size()) {
    throw DimensionError("assign_targets: retained and anchor counts differ");
  }
  AssignedTargets t;
  for (std::size_t r = 0; r < retained.size(); ++r) {
    const auto& box = offsets.box.at(retained[r]);
    if (box) {
      t.cls.push_back(gts[*box].label);
      t.reg.push_back(encode_box(gts[*box], anchors[r]));
    } else {
      t.cls.push_back(std::nullopt);
      t.reg.push_back(std::nullopt);
    }
  }
  return t;
}

DetectionLoss detection_loss(const HeadOutput& preds, const AssignedTargets& targets) {
  const std::size_t n = targets.size();
  if (preds.cls_logits.shape() != ad::Shape{n, geo::kNumClasses} ||
      preds.reg.shape() != ad::Shape{n, kBoxCodeSize}) {
    throw DimensionError(fmt::format("detection_loss: predictions {} / {} for {} targets",
                                     ad::shape_str(preds.cls_logits.shape()),
                                     ad::shape_str(preds.reg.shape()), n));
  }
  Tape& tape = *preds.reg.tape();
  DetectionLoss out;
  if (n == 0) {
    out.cls = out.ref = out.total = tape.constant(Tensor::scalar(0.0));
    return out;
  }
  std::vector<std::size_t> cls_idx(n);
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < n; ++i) {
    cls_idx[i] = targets.cls[i] ? static_cast<std::size_t>(*targets.cls[i]) : geo::kNumClasses;
    if (targets.cls[i]) fg.push_back(i);
  }
  out.cls = ad::mean(ad::softmax_cross_entropy(preds.cls_logits, cls_idx, true));

  if (fg.empty()) {
    out.ref = tape.constant(Tensor::scalar(0.0));
  } else {
    const std::size_t m = fg.size();
    std::vector<double> box_t, onehot, res_t;
    std::vector<std::size_t> bins;
    for (std::size_t i : fg) {
      const BoxEncoding& e = *targets.reg[i];
      box_t.insert(box_t.end(), e.begin(), e.begin() + 6);
      const auto logits = std::span<const double>(e).subspan(kYawLogitOffset, kNumYawBins);
      const std::size_t bin =
          static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      bins.push_back(bin);
      for (std::size_t b = 0; b < kNumYawBins; ++b) {
        onehot.push_back(b == bin ? 1.0 : 0.0);
        res_t.push_back(b == bin ? e[kYawResidualOffset + b] : 0.0);
      }
    }
    Var reg = ad::gather_rows(preds.reg, fg);
    Var box_term = ad::sum(ad::smooth_l1(
        ad::sub(ad::slice_cols(reg, 0, 6), tape.constant(Tensor({m, 6}, std::move(box_t)))),
        kBoxSmoothL1Delta));
    Var bin_term = ad::sum(ad::softmax_cross_entropy(
        ad::slice_cols(reg, kYawLogitOffset, kYawLogitOffset + kNumYawBins), bins, false));
    Var picked = ad::mul(ad::slice_cols(reg, kYawResidualOffset, kBoxCodeSize),
                         tape.constant(Tensor({m, kNumYawBins}, std::move(onehot))));
    Var res_term = ad::sum(ad::smooth_l1(
        ad::sub(picked, tape.constant(Tensor({m, kNumYawBins}, std::move(res_t)))),
        kBoxSmoothL1Delta));
    out.ref = ad::scale(ad::add(ad::add(box_term, bin_term), res_term),
                        1.0 / static_cast<double>(m));
  }
  out.total = ad::add(out.ref, out.cls);
  return out;
}

ClassScore best_class(std::span<const double> logits) {
  if (logits.size() != geo::kNumClasses) throw DimensionError("best_class: expected 3 logits");
  const std::size_t k =
      static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  // Softmax over the three logits and the implicit background logit 0.
  const double top = std::max(logits[k], 0.0);
  double denom = std::exp(-top);
  for (double l : logits) denom += std::exp(l - top);
  return {static_cast<geo::ObjectClass>(k), std::exp(logits[k] - top) / denom};
}

nlohmann::json detections_to_json(std::span<const geo::Detection> dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dets) {
    arr.push_back({{"class", geo::class_name(d.box.label)},
                   {"score", d.score},
                   {"center", d.box.center},
                   {"size", d.box.size},
                   {"yaw", d.box.yaw}});
  }
  return arr;
}

std::vector<geo::Detection> detections_from_json(const nlohmann::json& j) {
  std::vector<geo::Detection> out;
  try {
    for (const auto& d : j) {
      geo::Detection det;
      det.box.label = geo::class_from_name(d.at("class").get<std::string>());
      det.score = d.at("score").get<double>();
      det.box.center = d.at("center").get<geo::Vec3>();
      det.box.size = d.at("size").get<geo::Vec3>();
      det.box.yaw = d.at("yaw").get<double>();
      out.push_back(det);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("detections: {}", e.what()));
  }
  return out;
}

}  // namespace halo::model
