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

#include "halo/model.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

SALayerConfig aggregation_layer(std::size_t npoints, std::array<double, 2> radii,
                                std::array<std::size_t, 2> k, std::vector<std::size_t> m0,
                                std::vector<std::size_t> m1, std::size_t fuse) {
  SALayerConfig c;
  c.npoints = npoints;
  c.radii = radii;
  c.num_query = k;
  c.mlps = {std::move(m0), std::move(m1)};
  c.fuse = fuse;
  c.sampling = SamplingMode::kCenterAware;
  return c;
}

const char* mask_name(CenterMaskMode m) {
  return m == CenterMaskMode::kBinary ? "binary" : "centerness";
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  aggregation.validate();
  if (aggregation.npoints > backbone.out_points()) {
    throw ConfigError(fmt::format("aggregation npoints {} exceeds backbone output {}",
                                  aggregation.npoints, backbone.out_points()));
  }
  if (offset_hidden == 0 || shared_dim == 0 || projection_layers == 0) {
    throw ConfigError("model config: widths must be positive");
  }
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0) || !(score_threshold >= 0.0 && score_threshold < 1.0)) {
    throw ConfigError("model config: nms_iou and score_threshold must lie in [0, 1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"modality", geo::to_string(modality())},
          {"backbone", backbone.to_json()},
          {"offset_hidden", offset_hidden},
          {"aggregation", aggregation.to_json()},
          {"shared_dim", shared_dim},
          {"projection_layers", projection_layers},
          {"head_hidden", head_hidden},
          {"center_mask", mask_name(center_mask)},
          {"score_threshold", score_threshold},
          {"nms_iou", nms_iou}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    const auto modality = geo::modality_from_string(j.at("modality").get<std::string>());
    c.backbone = BackboneConfig::from_json(j.at("backbone"), modality);
    c.offset_hidden = j.at("offset_hidden").get<std::size_t>();
    c.aggregation = SALayerConfig::from_json(j.at("aggregation"));
    c.shared_dim = j.at("shared_dim").get<std::size_t>();
    c.projection_layers = j.value("projection_layers", std::size_t{3});
    c.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
    const std::string mask = j.value("center_mask", std::string("binary"));
    if (mask == "binary") {
      c.center_mask = CenterMaskMode::kBinary;
    } else if (mask == "centerness") {
      c.center_mask = CenterMaskMode::kCenterness;
    } else {
      throw ConfigError("model config: unknown center_mask '" + mask + "'");
    }
    c.score_threshold = j.value("score_threshold", 0.05);
    c.nms_iou = j.value("nms_iou", 0.01);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model config: {}", e.what()));
  }
  c.validate();
  return c;
}

ModelConfig paper_model(geo::Modality modality) {
  ModelConfig c;
  c.backbone = modality == geo::Modality::kLidar ? lidar_paper_backbone() : radar_paper_backbone();
  c.offset_hidden = 128;
  c.aggregation = aggregation_layer(256, {4.8, 6.4}, {16, 32}, {256, 256, 512},
                                    {256, 512, 1024}, 512);
  c.shared_dim = 512;
  c.head_hidden = {256, 256};
  return c;
}

ModelConfig toy_model(geo::Modality modality) {
  ModelConfig c;
  c.backbone = toy_backbone(modality);
  c.offset_hidden = 32;
  c.aggregation = aggregation_layer(std::min<std::size_t>(c.backbone.out_points(), 128), {1.6, 3.2}, {8, 16}, {64, 64},
                                    {64, 64}, 64);
  c.shared_dim = 64;
  c.head_hidden = {64, 64};
  return c;
}

ModelConfig tiny_model(geo::Modality modality) {
  ModelConfig c;
  c.backbone = tiny_backbone(modality);
  c.offset_hidden = 8;
  c.aggregation = aggregation_layer(8, {1.6, 3.2}, {4, 8}, {8}, {8}, 8);
  c.shared_dim = 6;
  c.head_hidden = {8};
  return c;
}

ProjectionConfig projection_config(const ModelConfig& primary, const ModelConfig& auxiliary) {
  if (primary.shared_dim != auxiliary.shared_dim) {
    throw ConfigError(fmt::format("shared widths differ: {} vs {}", primary.shared_dim,
                                  auxiliary.shared_dim));
  }
  return {primary.instance_dim(), auxiliary.instance_dim(), primary.shared_dim,
          primary.projection_layers};
}

void init_detector(ad::ParamStore& store, const ModelConfig& cfg, const std::string& root) {
  cfg.validate();
  init_backbone(store, root + prefix::kBackbone, cfg.backbone);
  ad::init_mlp(store, root + prefix::kOffset, cfg.offset_spec());
  init_sa_layer(store, root + prefix::kAggregation, cfg.aggregation, cfg.backbone.out_dim());
  init_head(store, root + prefix::kHead, cfg.head_config());
}

std::vector<geo::Vec3> EncodedScene::anchors() const {
  const Tensor& p = instance.positions.value();
  std::vector<geo::Vec3> out(p.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p.at(i, 0), p.at(i, 1), p.at(i, 2)};
  return out;
}

EncodedScene encode_scene(Tape& tape, const geo::PointCloud& cloud, const ModelConfig& cfg,
                          const ad::ParamStore& store, const std::string& root) {
  EncodedScene enc;
  enc.backbone = backbone_forward(tape, cloud, cfg.backbone, store, root + prefix::kBackbone);
  const ForegroundPoints& fg = enc.backbone.foreground;
  enc.centered = shift_points(
      tape, fg, predict_offsets(tape, fg, cfg.offset_spec(), store, root + prefix::kOffset));
  const auto& scores = fg.centeredness.value().values();
  enc.instance = aggregate_instances(tape, enc.centered, scores, cfg.aggregation, store,
                                     root + prefix::kAggregation);
  return enc;
}

SceneTargets build_targets(const EncodedScene& enc, std::span<const geo::Box3D> gts,
                           const ModelConfig& cfg) {
  SceneTargets t;
  for (const auto& layer : enc.backbone.scored) {
    t.centeredness.push_back(centeredness_targets(layer.positions, gts, cfg.center_mask));
  }
  t.offsets = compute_offset_targets(enc.centered.original, gts);
  const auto anchors = enc.anchors();
  t.detection = assign_targets(t.offsets, enc.instance.retained, anchors, gts);
  return t;
}

Stage1Terms stage1_terms(const EncodedScene& enc, const HeadOutput& head,
                         const SceneTargets& targets) {
  Stage1Terms s;
  for (std::size_t l = 0; l < enc.backbone.scored.size(); ++l) {
    Var term = centeredness_loss(enc.backbone.scored[l].centeredness, targets.centeredness.at(l));
    s.ctr = l == 0 ? term : ad::add(s.ctr, term);
  }
  s.oreg = offset_regression_loss(enc.centered.offsets, targets.offsets);
  s.det = detection_loss(head, targets.detection);
  s.s1 = ad::add(ad::add(s.ctr, s.oreg), s.det.total);
  return s;
}

HeadOutput stage1_head(Tape& tape, const EncodedScene& enc, const ModelConfig& cfg,
                       const ad::ParamStore& store, const std::string& root) {
  return head_forward(tape, head_input(tape, enc.instance.features, std::nullopt, cfg.shared_dim),
                      cfg.head_config(), store, root + prefix::kHead);
}

Stage2Head stage2_head(Tape& tape, const EncodedScene& enc, const ModelConfig& cfg,
                       const ProjectionConfig& proj, const ad::ParamStore& store) {
  Stage2Head out;
  out.hallucinated = project_features(tape, enc.instance.features, Domain::kPrimary, proj, store);
  out.head = head_forward(
      tape, head_input(tape, enc.instance.features, out.hallucinated, cfg.shared_dim),
      cfg.head_config(), store, prefix::kHeadStage2);
  return out;
}

void init_stage2(ad::ParamStore& store, const ModelConfig& primary,
                 const ad::ParamStore& auxiliary_params, const ProjectionConfig& proj) {
  for (const auto& [path, t] : auxiliary_params.all()) {
    if (path.rfind(prefix::kHead, 0) == 0) continue;
    store.set(prefix::kAuxiliary + path, t);
  }
  init_projection(store, proj, Domain::kPrimary);
  init_projection(store, proj, Domain::kAuxiliary);
  init_head(store, prefix::kSharedHead, primary.shared_head_config());
  const std::string head = prefix::kHead;
  for (const auto& path : store.paths_with_prefix(head + "/")) {
    Tensor t = store.get(path);
    const std::string suffix = path.substr(head.size());
    if (suffix == "/cls/layer0/weight" || suffix == "/reg/layer0/weight") {
      for (std::size_t r = primary.instance_dim(); r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) t.at(r, c) = 0.0;
      }
    }
    store.set(prefix::kHeadStage2 + suffix, std::move(t));
  }
}

AuxiliaryView auxiliary_view(const geo::PointCloud& cloud, const ModelConfig& auxiliary,
                             const ad::ParamStore& store) {
  Tape tape(false);
  const auto enc = encode_scene(tape, cloud, auxiliary, store, prefix::kAuxiliary);
  return {enc.instance.features.value(), enc.anchors()};
}

Stage2Terms stage2_terms(Tape& tape, const geo::PointCloud& cloud,
                         std::span<const geo::Box3D> gts, const ModelConfig& cfg,
                         const ProjectionConfig& proj, const ad::ParamStore& store,
                         const AuxiliaryView& aux, const Stage2Weights& w) {
  const auto enc = encode_scene(tape, cloud, cfg, store);
  const auto targets = build_targets(enc, gts, cfg);
  const auto s2 = stage2_head(tape, enc, cfg, proj, store);
  Stage2Terms out;
  out.s1 = stage1_terms(enc, s2.head, targets);
  const auto pm = selective_match(enc.anchors(), aux.anchors, w.match_radius);
  out.num_pairs = pm.num_pairs();
  Var aux_h = project_features(tape, tape.constant(aux.features), Domain::kAuxiliary, proj, store);
  out.fm = feature_matching_loss(s2.hallucinated, aux_h, pm);
  const auto shared = head_forward(tape, s2.hallucinated, cfg.shared_head_config(), store,
                                   prefix::kSharedHead);
  out.sdet = detection_loss(shared, targets.detection);
  out.s2 = ad::add(ad::add(out.s1.s1, ad::scale(out.fm, w.lambda1)),
                   ad::scale(out.sdet.total, w.lambda2));
  return out;
}

std::vector<geo::Detection> decode_detections(const EncodedScene& enc, const HeadOutput& head,
                                              const ModelConfig& cfg) {
  const Tensor& logits = head.cls_logits.value();
  const Tensor& reg = head.reg.value();
  const auto anchors = enc.anchors();
  std::vector<geo::Detection> dets;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const ClassScore cs = best_class(logits.data().subspan(i * geo::kNumClasses, geo::kNumClasses));
    if (cs.score < cfg.score_threshold) continue;
    geo::Detection d;
    d.box = decode_box(reg.data().subspan(i * kBoxCodeSize, kBoxCodeSize), anchors[i], cs.label);
    d.score = cs.score;
    dets.push_back(d);
  }
  return geo::nms(dets, cfg.nms_iou);
}

std::vector<geo::Detection> infer(const geo::PointCloud& cloud, const ModelConfig& cfg,
                                  const ad::ParamStore& store,
                                  const std::optional<ProjectionConfig>& proj) {
  if (cloud.size() == 0) return {};
  Tape tape(false);
  const EncodedScene enc = encode_scene(tape, cloud, cfg, store);
  const HeadOutput head =
      proj ? stage2_head(tape, enc, cfg, *proj, store).head : stage1_head(tape, enc, cfg, store);
  return decode_detections(enc, head, cfg);
}

}  // namespace halo::model
