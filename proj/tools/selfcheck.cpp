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

#include "selfcheck.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "halo/crossmodal.hpp"
#include "halo/geometry.hpp"
#include "support/loss_checks.hpp"
#include "support/oracles.hpp"

namespace halo {

namespace {

constexpr int kInstances = 20;

bool report(const std::string& name, bool ok, const std::string& detail) {
  fmt::print("{:<4} {:<28} {}\n", ok ? "ok" : "FAIL", name, detail);
  return ok;
}

bool kernel_checks() {
  using testing::random_points;
  Rng rng(7);
  std::size_t fps_bad = 0, ball_bad = 0, nn_bad = 0, match_bad = 0, nms_bad = 0;
  for (int t = 0; t < kInstances; ++t) {
    const auto pts = random_points(rng, 20 + rng.index(60));
    const std::size_t k = 1 + rng.index(pts.size());
    if (geo::farthest_point_sampling(pts, k, 0) != testing::fps_oracle(pts, k, 0)) ++fps_bad;

    const auto centers = random_points(rng, 1 + rng.index(10));
    const double r = rng.uniform(0.5, 3.0);
    const std::size_t max_k = 1 + rng.index(8);
    const auto g = geo::ball_query(centers, pts, r, max_k);
    const auto oracle = testing::ball_oracle(centers, pts, r, max_k);
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<std::size_t> got;
      for (std::size_t j = 0; j < max_k; ++j) {
        if (g.is_member(c, j)) got.push_back(g.member(c, j));
      }
      if (got != oracle[c]) ++ball_bad;
    }

    const auto queries = random_points(rng, 1 + rng.index(40));
    if (geo::radius_nn(queries, pts, r) != testing::radius_nn_oracle(queries, pts, r)) ++nn_bad;
    if (model::selective_match(queries, pts, r).match !=
        testing::radius_nn_oracle(queries, pts, r)) {
      ++match_bad;
    }

    std::vector<geo::Detection> dets;
    for (std::size_t i = 0, n = 2 + rng.index(20); i < n; ++i) {
      dets.push_back({testing::random_box(rng), std::round(rng.uniform() * 10) / 10});
    }
    const double thr = rng.uniform(0.0, 0.5);
    if (geo::nms_indices(dets, thr) != testing::nms_oracle(dets, thr, geo::rotated_iou_3d)) {
      ++nms_bad;
    }
  }
  bool ok = true;
  for (const auto& [name, bad] : {std::pair{"farthest point sampling", fps_bad},
                                  std::pair{"ball query", ball_bad},
                                  std::pair{"radius nearest neighbour", nn_bad},
                                  std::pair{"selective match", match_bad},
                                  std::pair{"nms", nms_bad}}) {
    ok &= report(name, bad == 0, fmt::format("{} random instances, {} mismatches", kInstances, bad));
  }
  return ok;
}

bool iou_checks() {
  geo::Box3D a;
  a.size = {2, 2, 2};
  geo::Box3D b = a;
  b.center = {1, 0, 0};
  const double same = geo::rotated_iou_3d(a, a);
  const double half = geo::rotated_iou_3d(a, b);
  return report("rotated IoU", std::abs(same - 1.0) < 1e-12 && std::abs(half - 1.0 / 3.0) < 1e-12,
                fmt::format("identical {:.12f}, half-shifted {:.12f}", same, half));
}

}  // namespace

bool run_selfcheck() {
  bool ok = true;
  for (const auto& c : testing::loss_gradient_suite(1, 300)) {
    ok &= report(c.name, c.result.max_rel_error < 1e-4 && c.result.checked > 0,
                 fmt::format("max rel error {:.2e} over {} coordinates ({} at kinks)",
                             c.result.max_rel_error, c.result.checked, c.result.excluded));
  }
  ok &= kernel_checks();
  ok &= iou_checks();
  fmt::print("{}\n", ok ? "selfcheck passed" : "selfcheck FAILED");
  return ok;
}

}  // namespace halo
