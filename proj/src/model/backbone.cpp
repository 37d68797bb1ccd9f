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

#include "halo/backbone.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "halo/errors.hpp"
#include "halo/nn.hpp"

namespace halo::model {

using ad::MlpSpec;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void SALayerConfig::validate() const {
  if (npoints == 0) throw ConfigError("SA layer: npoints must be positive");
  if (!(radii[0] > 0.0) || radii[1] < radii[0]) {
    throw ConfigError(fmt::format("SA layer: radii [{}, {}] must be positive and ascending",
                                  radii[0], radii[1]));
  }
  for (int b = 0; b < 2; ++b) {
    if (num_query[b] == 0) throw ConfigError("SA layer: num_query must be positive");
    if (mlps[b].empty()) throw ConfigError("SA layer: empty branch MLP");
  }
  if (fuse == 0) throw ConfigError("SA layer: fuse width must be positive");
}

MlpSpec SALayerConfig::branch_spec(std::size_t branch, std::size_t in_channels) const {
  std::vector<std::size_t> dims = {3 + in_channels};
  dims.insert(dims.end(), mlps[branch].begin(), mlps[branch].end());
  return MlpSpec::make(std::move(dims), /*final_relu=*/true);
}

MlpSpec SALayerConfig::fuse_spec() const {
  return MlpSpec::make({mlps[0].back() + mlps[1].back(), fuse}, /*final_relu=*/true);
}

nlohmann::json SALayerConfig::to_json() const {
  return {{"npoints", npoints},
          {"radii", radii},
          {"num_query", num_query},
          {"mlps", mlps},
          {"fuse", fuse},
          {"sampling", sampling == SamplingMode::kFps ? "fps" : "center_aware"}};
}

SALayerConfig SALayerConfig::from_json(const nlohmann::json& j) {
  SALayerConfig c;
  try {
    c.npoints = j.at("npoints").get<std::size_t>();
    const auto radii = j.at("radii").get<std::vector<double>>();
    const auto nq = j.at("num_query").get<std::vector<std::size_t>>();
    const auto mlps = j.at("mlps").get<std::vector<std::vector<std::size_t>>>();
    if (radii.size() != 2 || nq.size() != 2 || mlps.size() != 2) {
      throw ConfigError("SA layer: radii, num_query and mlps need two entries each");
    }
    c.radii = {radii[0], radii[1]};
    c.num_query = {nq[0], nq[1]};
    c.mlps = {mlps[0], mlps[1]};
    c.fuse = j.at("fuse").get<std::size_t>();
    const std::string s = j.value("sampling", "fps");
    if (s == "fps") {
      c.sampling = SamplingMode::kFps;
    } else if (s == "center_aware") {
      c.sampling = SamplingMode::kCenterAware;
    } else {
      throw ConfigError("SA layer: unknown sampling mode '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("SA layer config: ") + e.what());
  }
  c.validate();
  return c;
}

void BackboneConfig::validate() const {
  if (layers.empty()) throw ConfigError("backbone needs at least one SA layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l == 0 && layers[l].sampling == SamplingMode::kCenterAware) {
      throw ConfigError("backbone: the first layer has no scores for center-aware sampling");
    }
    if (l > 0 && layers[l].npoints > layers[l - 1].npoints) {
      throw ConfigError(fmt::format("backbone: layer {} samples {} of {} points", l,
                                    layers[l].npoints, layers[l - 1].npoints));
    }
  }
  if (score_hidden == 0) throw ConfigError("backbone: score_hidden must be positive");
}

nlohmann::json BackboneConfig::to_json() const {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) j["layers"].push_back(l.to_json());
  j["score_hidden"] = score_hidden;
  return j;
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j, geo::Modality modality) {
  BackboneConfig c;
  c.modality = modality;
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw ConfigError("backbone config: missing 'layers' array");
  }
  for (const auto& l : j.at("layers")) c.layers.push_back(SALayerConfig::from_json(l));
  c.score_hidden = j.value("score_hidden", std::size_t{64});
  c.validate();
  return c;
}

namespace {

SALayerConfig sa(std::size_t npoints, std::array<double, 2> radii,
                 std::array<std::size_t, 2> nq, std::vector<std::size_t> m0,
                 std::vector<std::size_t> m1, std::size_t fuse, SamplingMode mode) {
  SALayerConfig c;
  c.npoints = npoints;
  c.radii = radii;
  c.num_query = nq;
  c.mlps = {std::move(m0), std::move(m1)};
  c.fuse = fuse;
  c.sampling = mode;
  return c;
}

constexpr auto kFps = SamplingMode::kFps;
constexpr auto kCa = SamplingMode::kCenterAware;

}  // namespace

BackboneConfig lidar_paper_backbone() {
  BackboneConfig c;
  c.modality = geo::Modality::kLidar;
  c.layers = {sa(4096, {0.2, 0.8}, {16, 32}, {16, 16, 32}, {32, 32, 64}, 64, kFps),
              sa(1024, {0.8, 1.6}, {16, 32}, {64, 64, 128}, {64, 96, 128}, 128, kCa),
              sa(512, {1.6, 4.8}, {16, 32}, {128, 128, 256}, {128, 256, 256}, 256, kCa)};
  return c;
}

BackboneConfig radar_paper_backbone() {
  BackboneConfig c;
  c.modality = geo::Modality::kRadar;
  c.layers = {sa(512, {0.2, 0.8}, {16, 32}, {16, 16, 32}, {32, 32, 64}, 64, kFps),
              sa(512, {0.8, 1.6}, {16, 32}, {64, 64, 128}, {64, 96, 128}, 128, kCa),
              sa(256, {1.6, 4.8}, {16, 32}, {128, 128, 256}, {128, 256, 256}, 256, kCa)};
  return c;
}

BackboneConfig toy_backbone(geo::Modality modality) {
  BackboneConfig c;
  c.modality = modality;
  c.score_hidden = 32;
  if (modality == geo::Modality::kLidar) {
    c.layers = {sa(1024, {0.4, 1.2}, {8, 16}, {16, 16}, {16, 32}, 32, kFps),
                sa(256, {1.2, 2.4}, {8, 16}, {32, 32}, {32, 64}, 64, kCa)};
  } else {
    c.layers = {sa(128, {0.8, 2.4}, {8, 16}, {16, 16}, {16, 32}, 32, kFps),
                sa(64, {2.4, 4.8}, {8, 16}, {32, 32}, {32, 64}, 64, kCa)};
  }
  return c;
}

BackboneConfig tiny_backbone(geo::Modality modality) {
  BackboneConfig c;
  c.modality = modality;
  c.score_hidden = 8;
  c.layers = {sa(16, {0.5, 1.0}, {4, 8}, {8}, {8}, 8, kFps),
              sa(8, {1.0, 2.0}, {4, 8}, {16}, {16}, 16, kCa)};
  return c;
}

std::vector<std::size_t> center_aware_sample(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw ContractError(fmt::format("center_aware_sample: k={} exceeds {} points", k,
                                    scores.size()));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

void init_sa_layer(ad::ParamStore& store, const std::string& prefix,
                   const SALayerConfig& cfg, std::size_t in_channels) {
  cfg.validate();
  for (std::size_t b = 0; b < 2; ++b) {
    ad::init_mlp(store, fmt::format("{}/branch{}", prefix, b), cfg.branch_spec(b, in_channels));
  }
  ad::init_mlp(store, prefix + "/fuse", cfg.fuse_spec());
}

Var sa_group_forward(Tape& tape, Var positions, Var features,
                     std::span<const std::size_t> centers, const SALayerConfig& cfg,
                     const ad::ParamStore& store, const std::string& prefix) {
  const Tensor& pos = positions.value();
  const std::size_t n = pos.rows();
  const std::size_t in_channels = features.value().cols();
  if (features.value().rows() != n) {
    throw DimensionError(fmt::format("{}: {} positions but {} feature rows", prefix, n,
                                     features.value().rows()));
  }
  std::vector<geo::Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {pos.at(i, 0), pos.at(i, 1), pos.at(i, 2)};
  std::vector<geo::Vec3> center_pts;
  for (std::size_t c : centers) {
    if (c >= n) throw DimensionError(prefix + ": center index out of range");
    center_pts.push_back(pts[c]);
  }
  const std::size_t m = centers.size();

  std::vector<Var> pooled;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t k = cfg.num_query[b];
    const geo::GroupIndex group = geo::ball_query(center_pts, pts, cfg.radii[b], k);
    std::vector<std::size_t> center_rep(m * k);
    for (std::size_t g = 0; g < m; ++g) std::fill_n(center_rep.begin() + g * k, k, centers[g]);
    Var rel = ad::scale(ad::sub(ad::gather_rows(positions, group.indices),
                                ad::gather_rows(positions, center_rep)),
                        1.0 / cfg.radii[b]);
    Var grouped = ad::concat_cols({rel, ad::gather_rows(features, group.indices)});
    const MlpSpec spec = cfg.branch_spec(b, in_channels);
    Var lifted = ad::mlp_forward(tape, spec, store, fmt::format("{}/branch{}", prefix, b),
                                 grouped);
    Tensor mask({m, k}, std::vector<double>(group.mask.begin(), group.mask.end()));
    for (std::size_t g = 0; g < m; ++g) {
      // An empty neighborhood falls back to its nearest point.
      if (!group.valid[g]) mask[g * k] = 1.0;
    }
    pooled.push_back(ad::grouped_max_pool(ad::reshape(lifted, {m, k, spec.out_dim()}), mask));
  }
  return ad::mlp_forward(tape, cfg.fuse_spec(), store, prefix + "/fuse",
                         ad::concat_cols(pooled));
}

SAOutput sa_layer_forward(Tape& tape, Var positions, Var features, const SALayerConfig& cfg,
                          const ad::ParamStore& store, const std::string& prefix,
                          std::optional<std::span<const double>> scores) {
  const std::size_t n = positions.value().rows();
  if (cfg.npoints > n) {
    throw ContractError(fmt::format("{}: npoints={} exceeds {} available points", prefix,
                                    cfg.npoints, n));
  }
  SAOutput out;
  if (cfg.sampling == SamplingMode::kCenterAware) {
    if (!scores) throw ContractError(prefix + ": center-aware sampling needs scores");
    if (scores->size() != n) throw DimensionError(prefix + ": score count mismatch");
    out.centers = center_aware_sample(*scores, cfg.npoints);
  } else {
    const Tensor& pos = positions.value();
    std::vector<geo::Vec3> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = {pos.at(i, 0), pos.at(i, 1), pos.at(i, 2)};
    out.centers = geo::farthest_point_sampling(pts, cfg.npoints, 0);
  }
  out.features = sa_group_forward(tape, positions, features, out.centers, cfg, store, prefix);
  out.positions = ad::gather_rows(positions, out.centers);
  return out;
}

namespace {

MlpSpec score_spec(std::size_t in, std::size_t hidden) { return MlpSpec::make({in, hidden, 1}); }

}  // namespace

void init_backbone(ad::ParamStore& store, const std::string& prefix, const BackboneConfig& cfg) {
  cfg.validate();
  std::size_t channels = cfg.attr_width();
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    init_sa_layer(store, fmt::format("{}/sa{}", prefix, l), cfg.layers[l], channels);
    channels = cfg.layers[l].fuse;
    ad::init_mlp(store, fmt::format("{}/score{}", prefix, l), score_spec(channels, cfg.score_hidden));
  }
}

std::vector<std::size_t> canonical_order(const geo::PointCloud& cloud) {
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&cloud](std::size_t a, std::size_t b) {
    if (cloud.positions[a] != cloud.positions[b]) return cloud.positions[a] < cloud.positions[b];
    const auto aa = cloud.attrs(a), ab = cloud.attrs(b);
    return std::lexicographical_compare(aa.begin(), aa.end(), ab.begin(), ab.end());
  });
  return order;
}

BackboneOutput backbone_forward(Tape& tape, const geo::PointCloud& cloud,
                                const BackboneConfig& cfg, const ad::ParamStore& store,
                                const std::string& prefix) {
  cloud.validate();
  if (cloud.modality != cfg.modality) {
    throw ConfigError(fmt::format("backbone expects {} input, got {}",
                                  geo::to_string(cfg.modality), geo::to_string(cloud.modality)));
  }
  if (cloud.size() < cfg.layers.front().npoints) {
    throw ContractError(fmt::format("backbone: cloud has {} points, first layer samples {}",
                                    cloud.size(), cfg.layers.front().npoints));
  }
  const std::vector<std::size_t> order = canonical_order(cloud);
  const std::size_t n = cloud.size();
  const std::size_t a = cfg.attr_width();
  std::vector<double> pos(n * 3), attrs(n * a);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.positions[order[i]];
    std::copy(p.begin(), p.end(), pos.begin() + i * 3);
    const auto at = cloud.attrs(order[i]);
    std::copy(at.begin(), at.end(), attrs.begin() + i * a);
  }
  Var positions = tape.constant(Tensor({n, 3}, std::move(pos)));
  Var features = tape.constant(Tensor({n, a}, std::move(attrs)));
  std::vector<std::size_t> source = order;

  BackboneOutput out;
  std::vector<double> scores;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const auto& layer = cfg.layers[l];
    std::optional<std::span<const double>> sc;
    if (layer.sampling == SamplingMode::kCenterAware) sc = std::span<const double>(scores);
    SAOutput sa = sa_layer_forward(tape, positions, features, layer, store,
                                   fmt::format("{}/sa{}", prefix, l), sc);
    std::vector<std::size_t> next_source;
    for (std::size_t c : sa.centers) next_source.push_back(source[c]);
    source = std::move(next_source);
    positions = sa.positions;
    features = sa.features;

    Var logit = ad::mlp_forward(tape, score_spec(layer.fuse, cfg.score_hidden), store,
                                fmt::format("{}/score{}", prefix, l), features);
    Var ctr = ad::sigmoid(ad::reshape(logit, {layer.npoints}));
    scores.assign(ctr.value().data().begin(), ctr.value().data().end());

    ScoredPoints scored;
    const Tensor& pv = positions.value();
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      scored.positions.push_back({pv.at(i, 0), pv.at(i, 1), pv.at(i, 2)});
    }
    scored.centeredness = ctr;
    out.scored.push_back(std::move(scored));
  }
  out.foreground.positions = out.scored.back().positions;
  out.foreground.features = features;
  out.foreground.centeredness = out.scored.back().centeredness;
  out.foreground.source_index = std::move(source);
  return out;
}

CenterednessTargets centeredness_targets(std::span<const geo::Vec3> positions,
                                         std::span<const geo::Box3D> gts,
                                         CenterMaskMode mode) {
  CenterednessTargets t;
  for (const auto& p : positions) {
    const auto box = geo::containing_box(p, gts);
    const double y = box ? geo::gt_centeredness(p, gts[*box]) : 0.0;
    t.y.push_back(y);
    if (y == 0.0) {
      t.mask.push_back(0.0);
    } else {
      t.mask.push_back(mode == CenterMaskMode::kBinary ? 1.0 : y);
    }
  }
  return t;
}

Var centeredness_loss(Var predicted, const CenterednessTargets& targets) {
  const std::size_t n = predicted.value().size();
  if (targets.y.size() != n || targets.mask.size() != n) {
    throw DimensionError(fmt::format("centeredness_loss: {} predictions, {} targets", n,
                                     targets.y.size()));
  }
  Tape& tape = *predicted.tape();
  std::vector<double> pos_w(n), neg_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos_w[i] = targets.mask[i] * targets.y[i];
    neg_w[i] = 1.0 - targets.y[i];
  }
  Var p = ad::clamp(ad::reshape(predicted, {n}), kCenterednessClamp, 1.0 - kCenterednessClamp);
  Var log_p = ad::log(p);
  Var log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  Var pos = ad::mul(log_p, tape.constant(Tensor({n}, std::move(pos_w))));
  Var neg = ad::mul(log_q, tape.constant(Tensor({n}, std::move(neg_w))));
  return ad::scale(ad::sum(ad::add(pos, neg)), -1.0);
}

}  // namespace halo::model
