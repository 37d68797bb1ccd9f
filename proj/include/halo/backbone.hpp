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
#include "halo/nn.hpp"

namespace halo::model {

enum class SamplingMode { kFps, kCenterAware };

// One set-abstraction layer: SA(npoints, [r0, r1], [k0, k1], [mlp0, mlp1])
// followed by MLP(CAT(mlp0.back(), mlp1.back()) -> fuse).
struct SALayerConfig {
  std::size_t npoints = 0;
  std::array<double, 2> radii{};
  std::array<std::size_t, 2> num_query{};
  std::array<std::vector<std::size_t>, 2> mlps;  // output widths per branch
  std::size_t fuse = 0;
  SamplingMode sampling = SamplingMode::kFps;

  void validate() const;
  ad::MlpSpec branch_spec(std::size_t branch, std::size_t in_channels) const;
  ad::MlpSpec fuse_spec() const;

  nlohmann::json to_json() const;
  static SALayerConfig from_json(const nlohmann::json& j);
};

struct BackboneConfig {
  std::vector<SALayerConfig> layers;
  geo::Modality modality = geo::Modality::kLidar;
  std::size_t score_hidden = 64;

  std::size_t attr_width() const { return geo::attribute_width(modality); }
  std::size_t out_dim() const { return layers.back().fuse; }
  std::size_t out_points() const { return layers.back().npoints; }
  void validate() const;

  // {"layers":[{"npoints":..,"radii":[..],"num_query":[..],"mlps":[[..],[..]],
  //   "fuse":..,"sampling":"fps"|"center_aware"}], "score_hidden":..}
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j, geo::Modality modality);
};

BackboneConfig lidar_paper_backbone();
BackboneConfig radar_paper_backbone();
BackboneConfig toy_backbone(geo::Modality modality);
// Two layers, 8 output points, 16 channels.
BackboneConfig tiny_backbone(geo::Modality modality);

// Backbone output P_f: sampled positions t_i with features f_i and predicted
// centeredness in (0, 1).
struct ForegroundPoints {
  std::vector<geo::Vec3> positions;
  ad::Var features;      // N_f x D
  ad::Var centeredness;  // N_f
  std::vector<std::size_t> source_index;  // into the caller's cloud

  std::size_t size() const { return positions.size(); }
};

// Points whose centeredness was predicted at one backbone stage.
struct ScoredPoints {
  std::vector<geo::Vec3> positions;
  ad::Var centeredness;
};

struct BackboneOutput {
  ForegroundPoints foreground;
  std::vector<ScoredPoints> scored;  // one entry per layer
};

struct SAOutput {
  std::vector<std::size_t> centers;  // indices into the layer input
  ad::Var positions;                 // M x 3
  ad::Var features;                  // M x fuse
};

// Top-k by descending score; ties go to the lower index.
std::vector<std::size_t> center_aware_sample(std::span<const double> scores, std::size_t k);

void init_sa_layer(ad::ParamStore& store, const std::string& prefix,
                   const SALayerConfig& cfg, std::size_t in_channels);

// Groups around the given centers and returns fused per-center features.
// positions: N x 3 (may carry gradient), features: N x C.
ad::Var sa_group_forward(ad::Tape& tape, ad::Var positions, ad::Var features,
                         std::span<const std::size_t> centers,
                         const SALayerConfig& cfg, const ad::ParamStore& store,
                         const std::string& prefix);

// Selects cfg.npoints centers (FPS from index 0, or top-k of `scores` for
// center-aware layers) and runs sa_group_forward.
SAOutput sa_layer_forward(ad::Tape& tape, ad::Var positions, ad::Var features,
                          const SALayerConfig& cfg, const ad::ParamStore& store,
                          const std::string& prefix,
                          std::optional<std::span<const double>> scores = std::nullopt);

void init_backbone(ad::ParamStore& store, const std::string& prefix,
                   const BackboneConfig& cfg);

// Permutation that sorts the cloud by (x, y, z, attributes).
std::vector<std::size_t> canonical_order(const geo::PointCloud& cloud);

BackboneOutput backbone_forward(ad::Tape& tape, const geo::PointCloud& cloud,
                                const BackboneConfig& cfg, const ad::ParamStore& store,
                                const std::string& prefix);

enum class CenterMaskMode { kBinary, kCenterness };

struct CenterednessTargets {
  std::vector<double> y;
  std::vector<double> mask;  // 0 wherever y == 0
};

CenterednessTargets centeredness_targets(std::span<const geo::Vec3> positions,
                                         std::span<const geo::Box3D> gts,
                                         CenterMaskMode mode);

inline constexpr double kCenterednessClamp = 1e-7;

// -sum_k [ mask_k * y_k * log(p_k) + (1 - y_k) * log(1 - p_k) ], with p
// clamped into [1e-7, 1 - 1e-7].
ad::Var centeredness_loss(ad::Var predicted, const CenterednessTargets& targets);

}  // namespace halo::model
