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
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/autodiff.hpp"
#include "halo/geometry.hpp"
#include "halo/nn.hpp"

namespace halo::model {

enum class Domain { kPrimary, kAuxiliary };

// Widths of the two projection mappings F_pri: D -> F and F_aux: D^ -> F.
struct ProjectionConfig {
  std::size_t primary_dim = 0;
  std::size_t auxiliary_dim = 0;
  std::size_t shared_dim = 512;
  std::size_t num_layers = 3;

  void validate() const;
  ad::MlpSpec spec(Domain which) const;
  nlohmann::json to_json() const;
  static ProjectionConfig from_json(const nlohmann::json& j);
};

inline constexpr const char* kPrimaryProjection = "proj_pri";
inline constexpr const char* kAuxiliaryProjection = "proj_aux";
inline constexpr double kDefaultMatchRadius = 1.0;

const char* projection_prefix(Domain which);

void init_projection(ad::ParamStore& store, const ProjectionConfig& cfg, Domain which);

// Hidden layers use relu, the output layer is linear.
ad::Var project_features(ad::Tape& tape, ad::Var features, Domain which,
                         const ProjectionConfig& cfg, const ad::ParamStore& store);

// Binary N_f x N^_f matrix with at most one 1 per row, stored by row.
struct MatchMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::optional<std::size_t>> match;  // per primary point
  std::vector<double> distance;                   // per primary point, 0 when unmatched

  std::size_t num_pairs() const;
  bool at(std::size_t i, std::size_t j) const { return match[i] && *match[i] == j; }
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const;
  // [{"pri":i,"aux":j,"dist":d}, ...]
  nlohmann::json to_json() const;
};

// Row-wise 1-NN from each primary point to the auxiliary points within
// `radius`; ties go to the lowest auxiliary index.
MatchMatrix selective_match(std::span<const geo::Vec3> primary,
                            std::span<const geo::Vec3> auxiliary,
                            double radius = kDefaultMatchRadius);

// (1 / N_p) * sum_ij ||h_i - h^_j||_2 * PM_ij, differentiable in both
// arguments. N_p = 0 gives 0.
ad::Var feature_matching_loss(ad::Var primary, ad::Var auxiliary, const MatchMatrix& pm);
// Same loss against a constant auxiliary side.
ad::Var feature_matching_loss(ad::Var primary, const ad::Tensor& auxiliary,
                              const MatchMatrix& pm);

}  // namespace halo::model
