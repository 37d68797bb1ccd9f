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

#include "halo/crossmodal.hpp"

#include <cmath>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

void ProjectionConfig::validate() const {
  if (primary_dim == 0 || auxiliary_dim == 0 || shared_dim == 0) {
    throw ConfigError("projection: widths must be positive");
  }
  if (num_layers == 0) throw ConfigError("projection: num_layers must be positive");
}

ad::MlpSpec ProjectionConfig::spec(Domain which) const {
  std::vector<std::size_t> dims = {which == Domain::kPrimary ? primary_dim : auxiliary_dim};
  for (std::size_t l = 0; l < num_layers; ++l) dims.push_back(shared_dim);
  return ad::MlpSpec::make(dims);
}

nlohmann::json ProjectionConfig::to_json() const {
  return {{"primary_dim", primary_dim},
          {"auxiliary_dim", auxiliary_dim},
          {"shared_dim", shared_dim},
          {"num_layers", num_layers}};
}

ProjectionConfig ProjectionConfig::from_json(const nlohmann::json& j) {
  ProjectionConfig c;
  try {
    c.primary_dim = j.at("primary_dim").get<std::size_t>();
    c.auxiliary_dim = j.at("auxiliary_dim").get<std::size_t>();
    c.shared_dim = j.at("shared_dim").get<std::size_t>();
    c.num_layers = j.value("num_layers", std::size_t{3});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("projection config: {}", e.what()));
  }
  c.validate();
  return c;
}

const char* projection_prefix(Domain which) {
  return which == Domain::kPrimary ? kPrimaryProjection : kAuxiliaryProjection;
}

void init_projection(ad::ParamStore& store, const ProjectionConfig& cfg, Domain which) {
  cfg.validate();
  ad::init_mlp(store, projection_prefix(which), cfg.spec(which));
}

Var project_features(Tape& tape, Var features, Domain which, const ProjectionConfig& cfg,
                     const ad::ParamStore& store) {
  const ad::MlpSpec spec = cfg.spec(which);
  if (features.shape().size() != 2 || features.shape()[1] != spec.in_dim()) {
    throw DimensionError(fmt::format("{}: expected width {}, got {}", projection_prefix(which),
                                     spec.in_dim(), ad::shape_str(features.shape())));
  }
  return ad::mlp_forward(tape, spec, store, projection_prefix(which), features);
}

std::size_t MatchMatrix::num_pairs() const {
  std::size_t n = 0;
  for (const auto& m : match) n += m.has_value();
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> MatchMatrix::pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < match.size(); ++i) {
    if (match[i]) out.emplace_back(i, *match[i]);
  }
  return out;
}

nlohmann::json MatchMatrix::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [i, j] : pairs()) arr.push_back({{"pri", i}, {"aux", j}, {"dist", distance[i]}});
  return arr;
}

MatchMatrix selective_match(std::span<const geo::Vec3> primary,
                            std::span<const geo::Vec3> auxiliary, double radius) {
  if (!(radius > 0.0)) throw ContractError("selective_match: radius must be positive");
  MatchMatrix pm;
  pm.rows = primary.size();
  pm.cols = auxiliary.size();
  pm.match = geo::radius_nn(primary, auxiliary, radius);
  pm.distance.assign(pm.rows, 0.0);
  for (std::size_t i = 0; i < pm.rows; ++i) {
    if (pm.match[i]) {
      pm.distance[i] = std::sqrt(geo::squared_distance(primary[i], auxiliary[*pm.match[i]]));
    }
  }
  return pm;
}

Var feature_matching_loss(Var primary, Var auxiliary, const MatchMatrix& pm) {
  const auto& ps = primary.shape();
  const auto& as = auxiliary.shape();
  if (ps.size() != 2 || as.size() != 2 || ps[1] != as[1]) {
    throw DimensionError(fmt::format("feature_matching_loss: widths differ ({} vs {})",
                                     ad::shape_str(ps), ad::shape_str(as)));
  }
  if (ps[0] != pm.rows || as[0] != pm.cols) {
    throw DimensionError(fmt::format("feature_matching_loss: match matrix {}x{} for {} and {}",
                                     pm.rows, pm.cols, ad::shape_str(ps), ad::shape_str(as)));
  }
  const auto pairs = pm.pairs();
  if (pairs.empty()) return primary.tape()->constant(Tensor::scalar(0.0));
  std::vector<std::size_t> rows, cols;
  for (const auto& [i, j] : pairs) {
    rows.push_back(i);
    cols.push_back(j);
  }
  Var diff = ad::sub(ad::gather_rows(primary, rows), ad::gather_rows(auxiliary, cols));
  return ad::scale(ad::sum(ad::row_norm(diff)), 1.0 / static_cast<double>(pairs.size()));
}

Var feature_matching_loss(Var primary, const Tensor& auxiliary, const MatchMatrix& pm) {
  return feature_matching_loss(primary, primary.tape()->constant(auxiliary), pm);
}

}  // namespace halo::model
