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
#include "halo/errors.hpp"
#include "halo/gradcheck.hpp"
#include "halo/instance.hpp"
#include "support/oracles.hpp"
#include "support/plain_mlp.hpp"
#include "support/random_tensor.hpp"

using namespace halo;
using namespace halo::ad;
using namespace halo::model;
using halo::geo::Box3D;
using halo::geo::Vec3;

namespace {

ForegroundPoints make_fg(Tape& tape, std::vector<Vec3> pos, const Tensor& feat) {
  ForegroundPoints fg;
  fg.positions = std::move(pos);
  fg.features = tape.constant(feat);
  fg.centeredness = tape.constant(Tensor::filled({fg.positions.size()}, 0.5));
  for (std::size_t i = 0; i < fg.positions.size(); ++i) fg.source_index.push_back(i);
  return fg;
}

Box3D box_at(Vec3 c, Vec3 size = {2, 2, 2}, double yaw = 0.0) {
  Box3D b;
  b.center = c;
  b.size = size;
  b.yaw = yaw;
  return b;
}

OffsetTargets single_fg(Vec3 target) {
  OffsetTargets t;
  t.offsets = {target};
  t.indicator = {1};
  t.box = {0};
  return t;
}

SALayerConfig wide_layer(std::size_t npoints, std::size_t in_c) {
  SALayerConfig cfg;
  cfg.npoints = npoints;
  cfg.radii = {1.0, 2.0};
  cfg.num_query = {8, 16};
  cfg.mlps = {std::vector<std::size_t>{in_c + 3, 6}, std::vector<std::size_t>{5}};
  cfg.fuse = 7;
  return cfg;
}

}  // namespace

TEST_CASE("zero offset head leaves points in place") {
  Rng rng(1);
  const auto pts = halo::testing::random_points(rng, 10);
  const Tensor feat = halo::testing::random_tensor(rng, {10, 4}, -1, 1);
  ParamStore store;
  const MlpSpec spec = offset_head_spec(4, 5);
  init_mlp(store, "off", spec);
  for (const auto& [path, t] : store.all()) store.set(path, Tensor::zeros(t.shape()));
  Tape tape;
  const auto fg = make_fg(tape, pts, feat);
  const auto c = shift_points(tape, fg, predict_offsets(tape, fg, spec, store, "off"));
  CHECK(c.shifted_positions() == pts);

  // A constant output bias shifts every point by the same vector.
  store.set(bias_path("off", 1), Tensor::vector({0.5, -1.25, 2.0}));
  Tape tape2;
  const auto fg2 = make_fg(tape2, pts, feat);
  const auto c2 = shift_points(tape2, fg2, predict_offsets(tape2, fg2, spec, store, "off"));
  const auto moved = c2.shifted_positions();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(moved[i][0] == pts[i][0] + 0.5);
    CHECK(moved[i][1] == pts[i][1] - 1.25);
    CHECK(moved[i][2] == pts[i][2] + 2.0);
  }
}

TEST_CASE("offset head matches a loop oracle and shifts exactly") {
  Rng rng(2);
  const auto pts = halo::testing::random_points(rng, 12);
  const Tensor feat = halo::testing::random_tensor(rng, {12, 6}, -2, 2);
  ParamStore store;
  store.set_rng_state(17);
  const MlpSpec spec = offset_head_spec(6, 4);
  init_mlp(store, "off", spec);
  Tape tape;
  const auto fg = make_fg(tape, pts, feat);
  const auto c = shift_points(tape, fg, predict_offsets(tape, fg, spec, store, "off"));
  const auto shifted = c.shifted_positions();
  for (std::size_t i = 0; i < 12; ++i) {
    std::vector<double> row(feat.data().begin() + i * 6, feat.data().begin() + (i + 1) * 6);
    const auto expect = halo::testing::plain_mlp(store, "off", spec, row);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(c.offsets.value().at(i, k) - expect[k]) <= 1e-12);
      CHECK(shifted[i][k] - pts[i][k] == doctest::Approx(c.offsets.value().at(i, k)).epsilon(1e-12));
    }
  }
  // Some outputs must be negative: the head has no output activation.
  CHECK(std::any_of(c.offsets.value().data().begin(), c.offsets.value().data().end(),
                    [](double v) { return v < 0; }));

  Tape tape3;
  const auto bad = make_fg(tape3, pts, Tensor::zeros({12, 5}));
  CHECK_THROWS_AS(predict_offsets(tape3, bad, spec, store, "off"), DimensionError);
  CHECK_THROWS_AS(shift_points(tape3, bad, tape3.constant(Tensor::zeros({11, 3}))),
                  DimensionError);
}

TEST_CASE("offset targets") {
  const std::vector<Box3D> gts = {box_at({0, 0, 0}, {4, 2, 2}), box_at({1.5, 0, 0}, {2, 2, 2})};
  const std::vector<Vec3> pts = {{0, 0, 0}, {9, 9, 9}, {1.0, 0.2, 0.1}, {-1.5, 0.5, 0}};
  const auto t = compute_offset_targets(pts, gts);
  CHECK(t.indicator == std::vector<std::uint8_t>{1, 0, 1, 1});
  CHECK(t.offsets[0] == Vec3{0, 0, 0});
  CHECK(t.offsets[1] == Vec3{0, 0, 0});
  CHECK(!t.box[1].has_value());
  // Point 2 lies in both boxes and is closer to the second center.
  CHECK(*t.box[2] == 1);
  CHECK(t.offsets[2][0] == doctest::Approx(0.5));
  CHECK(t.offsets[2][1] == doctest::Approx(-0.2));
  CHECK(*t.box[3] == 0);
  CHECK(t.foreground_count() == 3);

  // Distance-comparison oracle on random overlapping boxes.
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Box3D> boxes = {halo::testing::random_box(rng, 1.0),
                                halo::testing::random_box(rng, 1.0)};
    const auto p = halo::testing::random_points(rng, 1, 1.5);
    const auto tt = compute_offset_targets(p, boxes);
    std::optional<std::size_t> expect;
    double best = 1e300;
    for (std::size_t b = 0; b < 2; ++b) {
      if (!halo::testing::halfplane_in_box(p[0], boxes[b])) continue;
      const double d = halo::testing::dist2(p[0], boxes[b].center);
      if (d < best) best = d, expect = b;
    }
    CHECK(tt.box[0] == expect);
    if (!expect) CHECK(tt.offsets[0] == Vec3{0, 0, 0});
  }
}

TEST_CASE("offset regression loss values") {
  Tape tape;
  CHECK(offset_regression_loss(tape.constant(Tensor::matrix({{0.5, 0, 0}})), single_fg({0.5, 0, 0}))
            .value()
            .item() == 0.0);
  CHECK(offset_regression_loss(tape.constant(Tensor::matrix({{0.5, 0, 0}})), single_fg({0, 0, 0}))
            .value()
            .item() == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(offset_regression_loss(tape.constant(Tensor::matrix({{2, 0, 0}})), single_fg({0, 0, 0}))
            .value()
            .item() == doctest::Approx(1.5).epsilon(1e-15));

  OffsetTargets none;
  none.offsets = {{1, 1, 1}, {0, 0, 0}};
  none.indicator = {0, 0};
  none.box = {std::nullopt, std::nullopt};
  CHECK(offset_regression_loss(tape.constant(Tensor::matrix({{3, 3, 3}, {1, 2, 3}})), none)
            .value()
            .item() == 0.0);

  // Averaging over foreground points only.
  OffsetTargets two;
  two.offsets = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  two.indicator = {1, 0, 1};
  two.box = {0, std::nullopt, 0};
  const double got =
      offset_regression_loss(tape.constant(Tensor::matrix({{2, 0, 0}, {9, 9, 9}, {0.5, 0.5, 0}})),
                             two)
          .value()
          .item();
  CHECK(got == doctest::Approx((1.5 + 0.125 + 0.125) / 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(offset_regression_loss(tape.constant(Tensor::zeros({2, 3})), two),
                  DimensionError);
}

TEST_CASE("offset loss gradient ignores background and passes finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    OffsetTargets t;
    for (int i = 0; i < 9; ++i) {
      const bool fg = rng.bernoulli(0.6);
      t.indicator.push_back(fg ? 1 : 0);
      t.box.push_back(fg ? std::optional<std::size_t>(0) : std::nullopt);
      t.offsets.push_back(fg ? Vec3{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}
                             : Vec3{0, 0, 0});
    }
    t.indicator[0] = 1;
    t.box[0] = 0;
    Tensor pred = halo::testing::random_tensor(rng, {9, 3}, -3, 3);
    // One coordinate sits exactly at the smooth-L1 transition, where the
    // slope is continuous.
    pred[0] = t.offsets[0][0] + 1.0;

    ParamStore store;
    store.set("pred", pred);
    Tape tape;
    Var loss = offset_regression_loss(tape.parameter(store, "pred"), t);
    CHECK(loss.value().item() >= 0.0);
    const auto grads = tape.backward(loss, store);
    const Tensor& g = grads.at("pred");
    for (std::size_t i = 0; i < 9; ++i) {
      if (t.indicator[i]) continue;
      for (std::size_t k = 0; k < 3; ++k) CHECK(g.at(i, k) == 0.0);
    }
    auto r = finite_diff_check([&t](Tape&, Var x) { return offset_regression_loss(x, t); }, pred);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("aggregation groups co-located points identically") {
  const std::vector<Vec3> pts = {{0, 0, 0}, {0.3, 0, 0}, {10, 0, 0}, {10, 0.2, 0}};
  const Tensor feat = Tensor::matrix({{0.1, 0.2}, {-0.4, 0.8}, {1, 1}, {0.5, -0.5}});
  const SALayerConfig cfg = wide_layer(4, 2);
  ParamStore store;
  init_sa_layer(store, "agg", cfg, 2);
  Tape tape;
  const auto fg = make_fg(tape, pts, feat);
  const Tensor off = Tensor::matrix({{1, 1, 1}, {0.7, 1, 1}, {0, 0, 0}, {0, -0.2, 0}});
  const auto c = shift_points(tape, fg, tape.constant(off));
  const std::vector<double> scores(4, 0.5);
  const auto inst = aggregate_instances(tape, c, scores, cfg, store, "agg");
  CHECK(inst.retained == std::vector<std::size_t>{0, 1, 2, 3});
  const Tensor& f = inst.features.value();
  for (std::size_t k = 0; k < cfg.fuse; ++k) {
    CHECK(f.at(0, k) == f.at(1, k));
    CHECK(f.at(2, k) == f.at(3, k));
  }
  CHECK(inst.positions.value().at(1, 0) == 1.0);

  SALayerConfig too_many = cfg;
  too_many.npoints = 5;
  CHECK_THROWS_AS(aggregate_instances(tape, c, scores, too_many, store, "agg"), ContractError);
}

TEST_CASE("aggregation matches a ball query, MLP and max pool composition") {
  Rng rng(8);
  const auto pts = halo::testing::random_points(rng, 20, 2.0);
  const Tensor feat = halo::testing::random_tensor(rng, {20, 3}, -1, 1);
  const Tensor off = halo::testing::random_tensor(rng, {20, 3}, -0.5, 0.5);
  SALayerConfig cfg = wide_layer(6, 3);
  cfg.sampling = SamplingMode::kCenterAware;
  ParamStore store;
  store.set_rng_state(3);
  init_sa_layer(store, "agg", cfg, 3);
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) scores.push_back(rng.uniform());

  Tape tape;
  const auto fg = make_fg(tape, pts, feat);
  const auto c = shift_points(tape, fg, tape.constant(off));
  const auto inst = aggregate_instances(tape, c, scores, cfg, store, "agg");
  CHECK(inst.retained == center_aware_sample(scores, 6));

  const auto shifted = c.shifted_positions();
  for (std::size_t g = 0; g < inst.retained.size(); ++g) {
    const Vec3 center = shifted[inst.retained[g]];
    std::vector<double> cat;
    for (std::size_t b = 0; b < 2; ++b) {
      const auto members =
          halo::testing::ball_oracle({center}, shifted, cfg.radii[b], cfg.num_query[b])[0];
      const MlpSpec spec = cfg.branch_spec(b, 3);
      std::vector<double> best(spec.out_dim(), -1e300);
      for (std::size_t m : members) {
        std::vector<double> in;
        for (int k = 0; k < 3; ++k) in.push_back((shifted[m][k] - center[k]) / cfg.radii[b]);
        for (int k = 0; k < 3; ++k) in.push_back(feat.at(m, k));
        const auto lifted =
            halo::testing::plain_mlp(store, "agg/branch" + std::to_string(b), spec, in);
        for (std::size_t j = 0; j < best.size(); ++j) best[j] = std::max(best[j], lifted[j]);
      }
      cat.insert(cat.end(), best.begin(), best.end());
    }
    const auto fused = halo::testing::plain_mlp(store, "agg/fuse", cfg.fuse_spec(), cat);
    for (std::size_t j = 0; j < fused.size(); ++j) {
      CHECK(std::abs(inst.features.value().at(g, j) - fused[j]) <= 1e-12);
    }
  }

  // FPS retention over the shifted positions.
  cfg.sampling = SamplingMode::kFps;
  const auto fps = aggregate_instances(tape, c, scores, cfg, store, "agg");
  CHECK(fps.retained == halo::testing::fps_oracle(shifted, 6, 0));
}

TEST_CASE("ground-truth offsets collapse each instance to one neighborhood") {
  Rng rng(11);
  for (int scene = 0; scene < 10; ++scene) {
    std::vector<Box3D> gts;
    for (int b = 0; b < 4; ++b) {
      gts.push_back(box_at({b * 12.0 + rng.uniform(-1, 1), rng.uniform(-3, 3), 0},
                           {rng.uniform(1, 4), rng.uniform(1, 2), rng.uniform(1, 2)},
                           rng.uniform(-3, 3)));
    }
    std::vector<Vec3> pts;
    std::vector<std::size_t> owner;
    for (std::size_t b = 0; b < gts.size(); ++b) {
      for (int i = 0; i < 6; ++i) {
        const Vec3 local = {rng.uniform(-0.45, 0.45) * gts[b].size[0],
                            rng.uniform(-0.45, 0.45) * gts[b].size[1],
                            rng.uniform(-0.45, 0.45) * gts[b].size[2]};
        pts.push_back(geo::from_box_frame(local, gts[b]));
        owner.push_back(b);
      }
    }
    pts.push_back({-20, 0, 0});
    owner.push_back(99);
    const auto t = compute_offset_targets(pts, gts);
    Tensor off = Tensor::zeros({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t k = 0; k < 3; ++k) off[i * 3 + k] = t.offsets[i][k];
    }
    Tape tape;
    const auto fg = make_fg(tape, pts, Tensor::zeros({pts.size(), 2}));
    const auto c = shift_points(tape, fg, tape.constant(off));
    const auto shifted = c.shifted_positions();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(shifted[i][k] - gts[owner[i]].center[k]) <= 1e-12);
      }
    }
    const auto groups = geo::ball_query(shifted, shifted, 4.8, 32);
    for (std::size_t g = 0; g + 1 < pts.size(); ++g) {
      std::set<std::size_t> members;
      for (std::size_t j = 0; j < groups.max_k; ++j) {
        if (groups.is_member(g, j)) members.insert(owner[groups.member(g, j)]);
      }
      CHECK(members == std::set<std::size_t>{owner[g]});
    }
  }
}

TEST_CASE("aggregation gradient reaches the offsets") {
  Rng rng(12);
  const auto pts = halo::testing::random_points(rng, 8, 1.0);
  const Tensor feat = halo::testing::random_tensor(rng, {8, 4}, -1, 1);
  ParamStore store;
  store.set_rng_state(21);
  const MlpSpec spec = offset_head_spec(4, 6);
  init_mlp(store, "off", spec);
  const SALayerConfig cfg = wide_layer(8, 4);
  init_sa_layer(store, "agg", cfg, 4);
  std::vector<Box3D> gts = {box_at({0.2, 0.1, 0}, {2, 2, 2})};
  const auto targets = compute_offset_targets(pts, gts);
  const std::vector<double> scores(8, 0.5);
  auto fn = [&](Tape& tape, const ParamStore& s) {
    const auto fg = make_fg(tape, pts, feat);
    const auto c = shift_points(tape, fg, predict_offsets(tape, fg, spec, s, "off"));
    const auto inst = aggregate_instances(tape, c, scores, cfg, s, "agg");
    return add(sum(inst.features), offset_regression_loss(c.offsets, targets));
  };
  const auto r = finite_diff_check_params(fn, store);
  CHECK(r.max_rel_error < 1e-4);
}
