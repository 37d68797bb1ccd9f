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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/backbone.hpp"
#include "halo/crossmodal.hpp"
#include "halo/detection.hpp"
#include "halo/instance.hpp"

namespace halo::model {

// One single-modality detector: backbone, offset head, aggregation layer,
// projection width and detection heads.
struct ModelConfig {
  BackboneConfig backbone;
  std::size_t offset_hidden = 128;
  SALayerConfig aggregation;
  std::size_t shared_dim = 512;
  std::size_t projection_layers = 3;
  std::vector<std::size_t> head_hidden = {256, 256};
  CenterMaskMode center_mask = CenterMaskMode::kBinary;
  double score_threshold = 0.05;
  double nms_iou = 0.01;

  geo::Modality modality() const { return backbone.modality; }
  std::size_t instance_dim() const { return aggregation.fuse; }
  ad::MlpSpec offset_spec() const { return offset_head_spec(backbone.out_dim(), offset_hidden); }
  HeadConfig head_config() const { return {instance_dim() + shared_dim, head_hidden}; }
  HeadConfig shared_head_config() const { return {shared_dim, head_hidden}; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

ModelConfig paper_model(geo::Modality modality);
ModelConfig toy_model(geo::Modality modality);
ModelConfig tiny_model(geo::Modality modality);

// Projection between a primary and an auxiliary model.
ProjectionConfig projection_config(const ModelConfig& primary, const ModelConfig& auxiliary);

namespace prefix {
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kOffset = "offset";
inline constexpr const char* kAggregation = "agg";
inline constexpr const char* kHead = "det_head";
inline constexpr const char* kHeadStage2 = "det_head_s2";
inline constexpr const char* kSharedHead = "shared_head";
inline constexpr const char* kAuxiliary = "aux/";
}  // namespace prefix

// Backbone, offset head, aggregation layer and stage-1 head under `root`.
void init_detector(ad::ParamStore& store, const ModelConfig& cfg, const std::string& root = "");

// Everything up to the instance features.
struct EncodedScene {
  BackboneOutput backbone;
  CenteredPoints centered;
  InstanceFeatures instance;

  std::vector<geo::Vec3> anchors() const;  // shifted positions of retained points
};

EncodedScene encode_scene(ad::Tape& tape, const geo::PointCloud& cloud, const ModelConfig& cfg,
                          const ad::ParamStore& store, const std::string& root = "");

struct SceneTargets {
  std::vector<CenterednessTargets> centeredness;  // one per backbone layer
  OffsetTargets offsets;
  AssignedTargets detection;
};

SceneTargets build_targets(const EncodedScene& enc, std::span<const geo::Box3D> gts,
                           const ModelConfig& cfg);

struct Stage1Terms {
  ad::Var ctr;   // summed over every scored backbone layer
  ad::Var oreg;
  DetectionLoss det;
  ad::Var s1;    // ctr + oreg + det
};

Stage1Terms stage1_terms(const EncodedScene& enc, const HeadOutput& head,
                         const SceneTargets& targets);

// Stage-1 head: the hallucinated slot is zero-filled.
HeadOutput stage1_head(ad::Tape& tape, const EncodedScene& enc, const ModelConfig& cfg,
                       const ad::ParamStore& store, const std::string& root = "");

struct Stage2Head {
  ad::Var hallucinated;  // H = F_pri(instance features)
  HeadOutput head;       // det_head_s2 on CAT(instance, H)
};

Stage2Head stage2_head(ad::Tape& tape, const EncodedScene& enc, const ModelConfig& cfg,
                       const ProjectionConfig& proj, const ad::ParamStore& store);

// Adds the stage-2 parameters to a store that holds a stage-1 primary model:
// the auxiliary model (minus its head) under "aux/", both projections, the
// shared head, and det_head_s2 copied from det_head with the hallucinated
// rows of its first layers zeroed. Fresh weights draw from store's rng.
void init_stage2(ad::ParamStore& store, const ModelConfig& primary,
                 const ad::ParamStore& auxiliary_params, const ProjectionConfig& proj);

// The frozen auxiliary model's output for one scene: instance features and
// shifted points, computed without recording gradients. Stage 2 projects the
// features through the trainable F_aux.
struct AuxiliaryView {
  ad::Tensor features;  // N_aux x D^
  std::vector<geo::Vec3> anchors;
};
AuxiliaryView auxiliary_view(const geo::PointCloud& cloud, const ModelConfig& auxiliary,
                             const ad::ParamStore& store);

struct Stage2Weights {
  double lambda1 = 1.0 / 3.0;
  double lambda2 = 2.0 / 3.0;
  double match_radius = kDefaultMatchRadius;
};

struct Stage2Terms {
  Stage1Terms s1;  // on det_head_s2
  ad::Var fm;
  DetectionLoss sdet;
  ad::Var s2;  // s1 + lambda1 * fm + lambda2 * sdet
  std::size_t num_pairs = 0;
};
Stage2Terms stage2_terms(ad::Tape& tape, const geo::PointCloud& cloud,
                         std::span<const geo::Box3D> gts, const ModelConfig& cfg,
                         const ProjectionConfig& proj, const ad::ParamStore& store,
                         const AuxiliaryView& aux, const Stage2Weights& w);

// Scores, decodes and NMS-filters per-point predictions.
std::vector<geo::Detection> decode_detections(const EncodedScene& enc, const HeadOutput& head,
                                              const ModelConfig& cfg);

// Primary-modality inference. Uses the stage-2 head when `proj` is given.
std::vector<geo::Detection> infer(const geo::PointCloud& cloud, const ModelConfig& cfg,
                                  const ad::ParamStore& store,
                                  const std::optional<ProjectionConfig>& proj = std::nullopt);

}  // namespace halo::model
