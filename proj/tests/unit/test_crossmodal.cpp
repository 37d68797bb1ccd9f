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

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "halo/crossmodal.hpp"
#include "halo/errors.hpp"
#include "halo/gradcheck.hpp"
#include "halo/instance.hpp"
#include "support/oracles.hpp"
#include "support/plain_mlp.hpp"
#include "support/random_tensor.hpp"

using namespace halo;
using namespace halo::ad;
using namespace halo::model;
using halo::geo::Vec3;

namespace {

MatchMatrix identity_match(std::size_t n) {
  MatchMatrix pm;
  pm.rows = pm.cols = n;
  for (std::size_t i = 0; i < n; ++i) pm.match.push_back(i);
  pm.distance.assign(n, 0.0);
  return pm;
}

// Sum over every (i, j) cell of PM, as written in the loss definition.
double double_loop_fm(const Tensor& h, const Tensor& ha, const MatchMatrix& pm) {
  double total = 0.0;
  double np = 0.0;
  for (std::size_t i = 0; i < pm.rows; ++i) {
    for (std::size_t j = 0; j < pm.cols; ++j) {
      const double w = pm.at(i, j) ? 1.0 : 0.0;
      double sq = 0.0;
      for (std::size_t c = 0; c < h.cols(); ++c) sq += std::pow(h.at(i, c) - ha.at(j, c), 2);
      total += std::sqrt(sq) * w;
      np += w;
    }
  }
  return np == 0.0 ? 0.0 : total / np;
}

}  // namespace

TEST_CASE("projection defaults and identity") {
  ProjectionConfig cfg;
  CHECK(cfg.shared_dim == 512);
  CHECK(cfg.num_layers == 3);
  CHECK(kDefaultMatchRadius == 1.0);

  cfg.primary_dim = cfg.auxiliary_dim = cfg.shared_dim = 5;
  ParamStore store;
  init_projection(store, cfg, Domain::kPrimary);
  const MlpSpec spec = cfg.spec(Domain::kPrimary);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Tensor w = Tensor::zeros({5, 5});
    for (std::size_t i = 0; i < 5; ++i) w.at(i, i) = 1.0;
    store.set(weight_path("proj_pri", l), w);
  }
  Rng rng(1);
  // Backbone features come out of a relu, so they are non-negative.
  const Tensor x = halo::testing::random_tensor(rng, {7, 5}, 0, 3);
  Tape tape;
  CHECK(project_features(tape, tape.constant(x), Domain::kPrimary, cfg, store).value() == x);
  CHECK_THROWS_AS(project_features(tape, tape.constant(Tensor::zeros({7, 4})), Domain::kPrimary,
                                   cfg, store),
                  DimensionError);
}

TEST_CASE("projection matches a loop oracle on both sides") {
  ProjectionConfig cfg{6, 4, 8, 3};
  ParamStore store;
  store.set_rng_state(5);
  init_projection(store, cfg, Domain::kPrimary);
  init_projection(store, cfg, Domain::kAuxiliary);
  Rng rng(2);
  for (Domain d : {Domain::kPrimary, Domain::kAuxiliary}) {
    const MlpSpec spec = cfg.spec(d);
    const Tensor x = halo::testing::random_tensor(rng, {5, spec.in_dim()}, -1, 1);
    Tape tape;
    const Tensor y = project_features(tape, tape.constant(x), d, cfg, store).value();
    CHECK(y.cols() == 8);
    for (std::size_t r = 0; r < 5; ++r) {
      std::vector<double> row(x.data().begin() + r * x.cols(),
                              x.data().begin() + (r + 1) * x.cols());
      const auto expect = halo::testing::plain_mlp(store, projection_prefix(d), spec, row);
      for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(y.at(r, c) - expect[c]) <= 1e-12);
    }
  }
  const auto round = ProjectionConfig::from_json(cfg.to_json());
  CHECK(round.spec(Domain::kAuxiliary).dims == cfg.spec(Domain::kAuxiliary).dims);
  CHECK_THROWS_AS(ProjectionConfig::from_json({{"primary_dim", 3}}), ConfigError);
}

TEST_CASE("selective match examples") {
  Rng rng(3);
  const auto pts = halo::testing::random_points(rng, 15, 10.0);
  const auto same = selective_match(pts, pts);
  CHECK(same.num_pairs() == 15);
  for (std::size_t i = 0; i < 15; ++i) CHECK(same.at(i, i));

  const std::vector<Vec3> pri = {{0, 0, 0}, {5, 0, 0}, {10, 0, 0}};
  const std::vector<Vec3> aux = {{0.5, 0, 0}, {-0.5, 0, 0}, {5.9, 0, 0}, {30, 0, 0}};
  const auto pm = selective_match(pri, aux);
  CHECK(pm.at(0, 0));  // equidistant: lowest index
  CHECK(pm.at(1, 2));
  CHECK(!pm.match[2].has_value());
  CHECK(pm.num_pairs() == 2);
  const auto j = pm.to_json();
  REQUIRE(j.size() == 2);
  CHECK(j[1]["pri"] == 1);
  CHECK(j[1]["aux"] == 2);
  CHECK(j[1]["dist"].get<double>() == doctest::Approx(0.9));
  CHECK_THROWS_AS(selective_match(pri, aux, 0.0), ContractError);
}

TEST_CASE("selective match equals an exhaustive oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pri = halo::testing::random_points(rng, 40, 4.0);
    const auto aux = halo::testing::random_points(rng, 25, 4.0);
    const double radius = rng.uniform(0.3, 2.0);
    const auto pm = selective_match(pri, aux, radius);
    CHECK(pm.match == halo::testing::radius_nn_oracle(pri, aux, radius));
    for (std::size_t i = 0; i < 40; ++i) {
      int row = 0;
      for (std::size_t jj = 0; jj < 25; ++jj) row += pm.at(i, jj);
      CHECK(row <= 1);
      if (pm.match[i]) CHECK(std::sqrt(halo::testing::dist2(pri[i], aux[*pm.match[i]])) <= radius);
    }
    // Dropping auxiliary points out of range of every primary point keeps PM.
    std::vector<Vec3> kept;
    std::vector<std::size_t> kept_index;
    for (std::size_t jj = 0; jj < aux.size(); ++jj) {
      const bool near = std::any_of(pri.begin(), pri.end(), [&](const Vec3& p) {
        return halo::testing::dist2(p, aux[jj]) <= radius * radius;
      });
      if (near) kept.push_back(aux[jj]), kept_index.push_back(jj);
    }
    const auto reduced = selective_match(pri, kept, radius);
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(reduced.match[i].has_value() == pm.match[i].has_value());
      if (reduced.match[i]) CHECK(kept_index[*reduced.match[i]] == *pm.match[i]);
    }
  }
}

TEST_CASE("feature matching loss values") {
  Tape tape;
  Rng rng(5);
  const Tensor h = halo::testing::random_tensor(rng, {4, 6}, -1, 1);
  CHECK(feature_matching_loss(tape.constant(h), h, identity_match(4)).value().item() == 0.0);

  Tensor one = Tensor::zeros({1, 6});
  one.at(0, 0) = 3;
  one.at(0, 1) = 4;
  CHECK(feature_matching_loss(tape.constant(one), Tensor::zeros({1, 6}), identity_match(1))
            .value()
            .item() == doctest::Approx(5.0).epsilon(1e-15));

  MatchMatrix empty;
  empty.rows = 4;
  empty.cols = 2;
  empty.match.assign(4, std::nullopt);
  empty.distance.assign(4, 0.0);
  CHECK(feature_matching_loss(tape.constant(h), Tensor::zeros({2, 6}), empty).value().item() ==
        0.0);
  CHECK_THROWS_AS(feature_matching_loss(tape.constant(h), Tensor::zeros({2, 5}), empty),
                  DimensionError);
  CHECK_THROWS_AS(feature_matching_loss(tape.constant(h), Tensor::zeros({3, 6}), empty),
                  DimensionError);
}

TEST_CASE("feature matching loss equals the double-loop definition") {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor h = halo::testing::random_tensor(rng, {9, 5}, -2, 2);
    const Tensor ha = halo::testing::random_tensor(rng, {7, 5}, -2, 2);
    MatchMatrix pm;
    pm.rows = 9;
    pm.cols = 7;
    pm.match.assign(9, std::nullopt);
    pm.distance.assign(9, 0.0);
    // Five pairs, auxiliary rows may repeat.
    for (std::size_t i : {0, 2, 3, 6, 8}) pm.match[i] = rng.index(7);
    Tape tape;
    const double got = feature_matching_loss(tape.constant(h), ha, pm).value().item();
    CHECK(got >= 0.0);
    CHECK(std::abs(got - double_loop_fm(h, ha, pm)) <= 1e-12);

    // Scaling every matched difference by c scales the loss by c.
    const double c = rng.uniform(0.1, 5.0);
    Tensor hs = h;
    for (const auto& [i, j] : pm.pairs()) {
      for (std::size_t k = 0; k < 5; ++k) hs.at(i, k) = ha.at(j, k) + c * (h.at(i, k) - ha.at(j, k));
    }
    const double scaled = feature_matching_loss(tape.constant(hs), ha, pm).value().item();
    CHECK(scaled == doctest::Approx(c * got).epsilon(1e-12));
  }
}

TEST_CASE("feature matching gradient flows into the primary side only") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor h = halo::testing::random_tensor(rng, {6, 4}, -1, 1);
    Tensor ha = halo::testing::random_tensor(rng, {5, 4}, -1, 1);
    MatchMatrix pm;
    pm.rows = 6;
    pm.cols = 5;
    pm.distance.assign(6, 0.0);
    for (std::size_t i = 0; i < 6; ++i) {
      if (i != 4) pm.match.push_back(rng.index(5));
      else pm.match.push_back(std::nullopt);
    }
    // One exact-zero difference sits on the norm kink.
    for (std::size_t k = 0; k < 4; ++k) ha.at(*pm.match[0], k) = h.at(0, k);

    ParamStore store;
    store.set("h", h);
    Tape tape;
    Var loss = feature_matching_loss(tape.parameter(store, "h"), ha, pm);
    const auto g = tape.backward(loss, store).at("h");
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.at(0, k) == 0.0);
      CHECK(g.at(4, k) == 0.0);
    }
    auto r = finite_diff_check([&](Tape&, Var x) { return feature_matching_loss(x, ha, pm); }, h);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.excluded >= 1);
  }
}

TEST_CASE("matched pairs sit at instance centers when offsets are exact") {
  Rng rng(8);
  for (int scene = 0; scene < 10; ++scene) {
    std::vector<geo::Box3D> gts;
    for (int b = 0; b < 5; ++b) {
      geo::Box3D box;
      box.center = {b * 6.0 + rng.uniform(-0.5, 0.5), rng.uniform(-2, 2), 0.8};
      box.size = {rng.uniform(1, 4), rng.uniform(0.6, 2), rng.uniform(1, 2)};
      box.yaw = rng.uniform(-3, 3);
      gts.push_back(box);
    }
    auto sample = [&](std::size_t per_box, std::vector<std::size_t>& owner) {
      std::vector<Vec3> pts;
      for (std::size_t b = 0; b < gts.size(); ++b) {
        // The last object is seen by the primary sensor only.
        const std::size_t n = (b == 4 && per_box < 5) ? 0 : per_box;
        for (std::size_t i = 0; i < n; ++i) {
          const Vec3 local = {rng.uniform(-0.45, 0.45) * gts[b].size[0],
                              rng.uniform(-0.45, 0.45) * gts[b].size[1],
                              rng.uniform(-0.45, 0.45) * gts[b].size[2]};
          pts.push_back(geo::from_box_frame(local, gts[b]));
          owner.push_back(b);
        }
      }
      const auto t = compute_offset_targets(pts, gts);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) pts[i][k] += t.offsets[i][k];
      }
      return pts;
    };
    std::vector<std::size_t> pri_owner, aux_owner;
    const auto pri = sample(3, pri_owner);
    const auto aux = sample(12, aux_owner);
    const auto pm = selective_match(pri, aux);
    std::set<std::size_t> matched_objects;
    for (const auto& [i, j] : pm.pairs()) {
      CHECK(pri_owner[i] == aux_owner[j]);
      matched_objects.insert(pri_owner[i]);
    }
    CHECK(matched_objects == std::set<std::size_t>{0, 1, 2, 3});
  }
}
