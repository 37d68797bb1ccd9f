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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "halo/detection.hpp"
#include "halo/errors.hpp"
#include "halo/gradcheck.hpp"
#include "halo/model.hpp"
#include "support/oracles.hpp"
#include "support/plain_mlp.hpp"
#include "support/random_tensor.hpp"

using namespace halo;
using namespace halo::ad;
using namespace halo::model;
using halo::geo::Box3D;
using halo::geo::ObjectClass;
using halo::geo::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

double yaw_gap(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 2 * kPi);
  return std::min(d, 2 * kPi - d);
}

HeadOutput const_head(Tape& tape, const Tensor& logits, const Tensor& reg) {
  return {tape.constant(logits), tape.constant(reg)};
}

AssignedTargets targets_for(const std::vector<std::optional<Box3D>>& boxes,
                            const std::vector<Vec3>& anchors) {
  AssignedTargets t;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i]) {
      t.cls.push_back(boxes[i]->label);
      t.reg.push_back(encode_box(*boxes[i], anchors[i]));
    } else {
      t.cls.push_back(std::nullopt);
      t.reg.push_back(std::nullopt);
    }
  }
  return t;
}

geo::PointCloud random_cloud(Rng& rng, std::size_t n, geo::Modality m) {
  geo::PointCloud c;
  c.modality = m;
  c.positions = halo::testing::random_points(rng, n, 4.0);
  for (std::size_t i = 0; i < n * geo::attribute_width(m); ++i) c.attributes.push_back(rng.uniform());
  return c;
}

}  // namespace

TEST_CASE("box encoding at a bin center") {
  Box3D b;
  b.center = {1, 2, 3};
  b.size = {4, 1.8, 1.6};
  b.yaw = yaw_bin_center(4);
  const auto e = encode_box(b, b.center);
  for (std::size_t k = 0; k < 3; ++k) CHECK(e[k] == 0.0);
  CHECK(e[3] == doctest::Approx(std::log(4.0)));
  for (std::size_t bin = 0; bin < kNumYawBins; ++bin) {
    CHECK(e[kYawLogitOffset + bin] == (bin == 4 ? 1.0 : 0.0));
    CHECK(std::abs(e[kYawResidualOffset + bin]) <= 1e-12);
  }
  CHECK(kBoxCodeSize == 30);
}

TEST_CASE("yaw pi lands in the last bin at its upper edge") {
  // floor((pi + pi) / (pi / 6)) = 12, clamped to 11; bin center 11.5 * pi/6 - pi.
  CHECK(yaw_bin(kPi) == 11);
  CHECK(yaw_bin_center(11) == doctest::Approx(kPi - kPi / 12));
  Box3D b;
  b.size = {1, 1, 1};
  b.yaw = kPi;
  const auto e = encode_box(b, {0, 0, 0});
  CHECK(e[kYawLogitOffset + 11] == 1.0);
  CHECK(e[kYawResidualOffset + 11] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(decode_box(e, {0, 0, 0}, ObjectClass::kCar).yaw == doctest::Approx(kPi));
  CHECK(yaw_bin(-kPi + 1e-12) == 0);
  // A residual past the upper edge of bin 11 wraps to the far side:
  // pi - pi/12 + 1.5 * pi/12 = pi + pi/24 -> -pi + pi/24.
  BoxEncoding over = e;
  over[kYawResidualOffset + 11] = 1.5;
  CHECK(decode_box(over, {0, 0, 0}, ObjectClass::kCar).yaw ==
        doctest::Approx(-kPi + kPi / 24).epsilon(1e-12));
}

TEST_CASE("encode and decode round trip") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    Box3D b = halo::testing::random_box(rng, 20.0);
    b.label = static_cast<ObjectClass>(rng.index(3));
    const Vec3 anchor = {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2)};
    const Box3D d = decode_box(encode_box(b, anchor), anchor, b.label);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(d.center[k] - b.center[k]) <= 1e-9);
      CHECK(std::abs(d.size[k] - b.size[k]) <= 1e-9);
    }
    CHECK(yaw_gap(d.yaw, b.yaw) <= 1e-9);
    CHECK(d.yaw > -kPi);
    CHECK(d.yaw <= kPi);
    CHECK(d.label == b.label);
  }
  // Wraparound near +-pi.
  for (double yaw : {kPi - 1e-10, -kPi + 1e-10, kPi, -kPi + 1e-3, kPi - 1e-3}) {
    Box3D b;
    b.size = {1, 2, 3};
    b.yaw = yaw;
    const Box3D d = decode_box(encode_box(b, {0, 0, 0}), {0, 0, 0}, ObjectClass::kCar);
    CHECK(yaw_gap(d.yaw, yaw) <= 1e-9);
  }
  const std::vector<double> short_code(29, 0.0);
  CHECK_THROWS_AS(decode_box(short_code, {0, 0, 0}, ObjectClass::kCar), DimensionError);
}

TEST_CASE("head forward: zero weights, zero-filled slot and loop oracle") {
  HeadConfig cfg{7, {5, 4}};
  ParamStore store;
  store.set_rng_state(9);
  init_head(store, "h", cfg);
  Rng rng(2);
  const Tensor inst = halo::testing::random_tensor(rng, {6, 4}, 0, 2);
  Tape tape;
  Var in = head_input(tape, tape.constant(inst), std::nullopt, 3);
  CHECK(in.shape() == Shape{6, 7});
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 4; c < 7; ++c) CHECK(in.value().at(r, c) == 0.0);
  }
  const HeadOutput out = head_forward(tape, in, cfg, store, "h");
  CHECK(out.cls_logits.shape() == Shape{6, 3});
  CHECK(out.reg.shape() == Shape{6, 30});
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> row(in.value().data().begin() + r * 7,
                            in.value().data().begin() + (r + 1) * 7);
    const auto cls = halo::testing::plain_mlp(store, "h/cls", cfg.cls_spec(), row);
    const auto reg = halo::testing::plain_mlp(store, "h/reg", cfg.reg_spec(), row);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.cls_logits.value().at(r, c) - cls[c]) <= 1e-12);
    for (std::size_t c = 0; c < 30; ++c) CHECK(std::abs(out.reg.value().at(r, c) - reg[c]) <= 1e-12);
  }

  ParamStore zero = store;
  for (const auto& [path, t] : store.all()) zero.set(path, Tensor::zeros(t.shape()));
  const HeadOutput z = head_forward(tape, in, cfg, zero, "h");
  CHECK(z.cls_logits.value() == Tensor::zeros({6, 3}));
  CHECK(z.reg.value() == Tensor::zeros({6, 30}));

  CHECK_THROWS_AS(head_forward(tape, tape.constant(inst), cfg, store, "h"), DimensionError);
  CHECK_THROWS_AS(head_input(tape, tape.constant(inst), tape.constant(Tensor::zeros({6, 2})), 3),
                  DimensionError);
}

TEST_CASE("detection loss: hand-evaluated two-point example") {
  // Point 0 is background with zero logits: CE over 4 equal logits = ln 4.
  // Point 1 is a Car with logits (ln 3, 0, 0) against background 0: p = 3/6,
  // CE = ln 2. Its box: center (1,0,0), size (e,1,1), yaw 0 -> bin 6 with
  // residual (0 - pi/12) / (pi/12) = -1.
  Box3D car;
  car.center = {1, 0, 0};
  car.size = {std::exp(1.0), 1, 1};
  car.label = ObjectClass::kCar;
  const auto targets = targets_for({std::nullopt, car}, {{5, 5, 0}, {0, 0, 0}});
  REQUIRE(targets.reg[1]);
  CHECK((*targets.reg[1])[kYawLogitOffset + 6] == 1.0);
  CHECK((*targets.reg[1])[kYawResidualOffset + 6] == doctest::Approx(-1.0));

  Tensor logits = Tensor::zeros({2, 3});
  logits.at(1, 0) = std::log(3.0);
  Tensor reg = Tensor::zeros({2, 30});
  reg.at(1, 0) = 1.5;  // center diff 0.5 -> 0.125
  reg.at(1, 3) = 1.0;  // log-size exact
  reg.at(1, 5) = 2.0;  // log-size diff 2 -> 1.5
  // Yaw logits all 0 -> ln 12; residual slot 6 is 0 against -1 -> 0.5.
  Tape tape;
  const auto loss = detection_loss(const_head(tape, logits, reg), targets);
  const double cls = (std::log(4.0) + std::log(2.0)) / 2.0;
  const double ref = 0.125 + 1.5 + std::log(12.0) + 0.5;
  CHECK(std::abs(loss.cls.value().item() - cls) <= 1e-12);
  CHECK(std::abs(loss.ref.value().item() - ref) <= 1e-12);
  CHECK(std::abs(loss.total.value().item() - (cls + ref)) <= 1e-12);
}

TEST_CASE("detection loss degenerate cases") {
  Rng rng(3);
  std::vector<std::optional<Box3D>> boxes;
  std::vector<Vec3> anchors;
  for (int i = 0; i < 5; ++i) {
    Box3D b = halo::testing::random_box(rng, 3.0);
    b.label = static_cast<ObjectClass>(i % 3);
    boxes.push_back(i == 2 ? std::nullopt : std::optional<Box3D>(b));
    anchors.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), 0});
  }
  const auto targets = targets_for(boxes, anchors);

  // Perfect predictions: matching regression, saturated logits.
  Tensor logits = Tensor::filled({5, 3}, -40.0);
  Tensor reg = Tensor::zeros({5, 30});
  for (std::size_t i = 0; i < 5; ++i) {
    if (!targets.reg[i]) continue;
    logits.at(i, static_cast<std::size_t>(*targets.cls[i])) = 40.0;
    const auto& e = *targets.reg[i];
    for (std::size_t c = 0; c < 30; ++c) {
      reg.at(i, c) = c >= kYawLogitOffset && c < kYawResidualOffset ? 80.0 * e[c] - 40.0 : e[c];
    }
  }
  Tape tape;
  const auto perfect = detection_loss(const_head(tape, logits, reg), targets);
  CHECK(perfect.ref.value().item() <= 1e-12);
  CHECK(perfect.cls.value().item() >= 0.0);
  CHECK(perfect.cls.value().item() < 1e-12);

  // Without foreground points only the classification term remains.
  const auto none = targets_for({std::nullopt, std::nullopt}, {{0, 0, 0}, {1, 1, 1}});
  const auto bg = detection_loss(
      const_head(tape, halo::testing::random_tensor(rng, {2, 3}, -1, 1),
                 halo::testing::random_tensor(rng, {2, 30}, -1, 1)),
      none);
  CHECK(bg.ref.value().item() == 0.0);
  CHECK(bg.total.value().item() == bg.cls.value().item());

  // A zero-weight head gives logits and codes of 0: a fixed baseline.
  const auto zero = detection_loss(const_head(tape, Tensor::zeros({5, 3}), Tensor::zeros({5, 30})),
                                   targets);
  double ref = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (!targets.reg[i]) continue;
    const auto& e = *targets.reg[i];
    for (std::size_t c = 0; c < 6; ++c) {
      ref += std::abs(e[c]) < 1 ? 0.5 * e[c] * e[c] : std::abs(e[c]) - 0.5;
    }
    ref += std::log(12.0);
    for (std::size_t c = kYawResidualOffset; c < 30; ++c) ref += 0.5 * e[c] * e[c];
  }
  CHECK(zero.cls.value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(std::abs(zero.ref.value().item() - ref / 4.0) <= 1e-12);

  CHECK_THROWS_AS(detection_loss(const_head(tape, logits, Tensor::zeros({5, 29})), targets),
                  DimensionError);
}

TEST_CASE("detection loss gradient passes finite differences") {
  HeadConfig cfg{6, {5}};
  ParamStore store;
  store.set_rng_state(4);
  init_head(store, "h", cfg);
  Rng rng(4);
  const Tensor x = halo::testing::random_tensor(rng, {7, 6}, -1, 1);
  std::vector<std::optional<Box3D>> boxes;
  std::vector<Vec3> anchors;
  for (int i = 0; i < 7; ++i) {
    Box3D b = halo::testing::random_box(rng, 2.0);
    b.label = static_cast<ObjectClass>(rng.index(3));
    boxes.push_back(rng.bernoulli(0.3) ? std::nullopt : std::optional<Box3D>(b));
    anchors.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), 0});
  }
  const auto targets = targets_for(boxes, anchors);
  auto fn = [&](Tape& tape, const ParamStore& s) {
    return detection_loss(head_forward(tape, tape.constant(x), cfg, s, "h"), targets).total;
  };
  CHECK(finite_diff_check_params(fn, store).max_rel_error < 1e-4);
}

TEST_CASE("best class score is the 4-way softmax probability") {
  const std::vector<double> l = {std::log(3.0), 0.0, 0.0};
  const auto cs = best_class(l);
  CHECK(cs.label == ObjectClass::kCar);
  CHECK(cs.score == doctest::Approx(0.5).epsilon(1e-14));
  const std::vector<double> big = {-800.0, 900.0, 0.0};
  CHECK(best_class(big).label == ObjectClass::kPedestrian);
  CHECK(best_class(big).score == doctest::Approx(1.0));
  const std::vector<double> tie = {0.0, 0.0, 0.0};
  CHECK(best_class(tie).label == ObjectClass::kCar);
  CHECK(best_class(tie).score == doctest::Approx(0.25));
}

TEST_CASE("detections JSON round trip") {
  geo::Detection d;
  d.box.center = {1.25, -3.5, 0.75};
  d.box.size = {4, 1.8, 1.6};
  d.box.yaw = 0.3;
  d.box.label = ObjectClass::kCyclist;
  d.score = 0.625;
  const std::vector<geo::Detection> dets = {d};
  const auto j = detections_to_json(dets);
  CHECK(j[0]["class"] == "Cyclist");
  CHECK(j[0]["score"] == 0.625);
  const auto back = detections_from_json(j);
  REQUIRE(back.size() == 1);
  CHECK(back[0].box.center == d.box.center);
  CHECK(back[0].box.label == d.box.label);
  CHECK_THROWS_AS(detections_from_json(nlohmann::json::parse(R"([{"class":"Car"}])")), ParseError);
}

TEST_CASE("regression targets exist exactly on indicator-1 points") {
  Rng rng(5);
  const ModelConfig cfg = tiny_model(geo::Modality::kRadar);
  ParamStore store;
  init_detector(store, cfg);
  for (int trial = 0; trial < 5; ++trial) {
    const auto cloud = random_cloud(rng, 48, geo::Modality::kRadar);
    std::vector<Box3D> gts;
    for (int b = 0; b < 3; ++b) {
      Box3D box = halo::testing::random_box(rng, 3.0);
      box.size = {3, 3, 3};
      gts.push_back(box);
    }
    Tape tape;
    const auto enc = encode_scene(tape, cloud, cfg, store);
    const auto t = build_targets(enc, gts, cfg);
    REQUIRE(t.detection.size() == enc.instance.retained.size());
    for (std::size_t r = 0; r < t.detection.size(); ++r) {
      const bool ind = t.offsets.indicator[enc.instance.retained[r]] == 1;
      CHECK(t.detection.reg[r].has_value() == ind);
      CHECK(t.detection.cls[r].has_value() == ind);
    }
    CHECK(t.centeredness.size() == cfg.backbone.layers.size());
  }
}

TEST_CASE("model presets and config round trip") {
  const ModelConfig paper = paper_model(geo::Modality::kLidar);
  CHECK(paper.nms_iou == 0.01);
  CHECK(paper.shared_dim == 512);
  CHECK(paper.instance_dim() == 512);
  CHECK(paper.offset_spec().dims == std::vector<std::size_t>{256, 128, 3});
  CHECK(paper.head_config().cls_spec().dims == std::vector<std::size_t>{1024, 256, 256, 3});
  CHECK(paper.head_config().reg_spec().dims == std::vector<std::size_t>{1024, 256, 256, 30});
  CHECK(paper.aggregation.radii == std::array<double, 2>{4.8, 6.4});
  const ModelConfig radar = paper_model(geo::Modality::kRadar);
  const auto proj = projection_config(radar, paper);
  CHECK(proj.spec(Domain::kPrimary).dims == std::vector<std::size_t>{512, 512, 512, 512});

  for (auto m : {geo::Modality::kLidar, geo::Modality::kRadar}) {
    for (const ModelConfig& c : {paper_model(m), toy_model(m), tiny_model(m)}) {
      const ModelConfig back = ModelConfig::from_json(c.to_json());
      CHECK(back.to_json() == c.to_json());
    }
  }
  auto bad = toy_model(geo::Modality::kRadar).to_json();
  bad["aggregation"]["npoints"] = 1000;
  CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);
  bad.erase("aggregation");
  CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);
}

TEST_CASE("inference is deterministic and empty clouds give no detections") {
  const ModelConfig cfg = tiny_model(geo::Modality::kLidar);
  ParamStore store;
  store.set_rng_state(12);
  init_detector(store, cfg);
  geo::PointCloud empty;
  empty.modality = geo::Modality::kLidar;
  CHECK(infer(empty, cfg, store).empty());

  Rng rng(6);
  ModelConfig loose = cfg;
  loose.score_threshold = 0.0;
  const auto cloud = random_cloud(rng, 64, geo::Modality::kLidar);
  const auto a = infer(cloud, loose, store);
  const auto b = infer(cloud, loose, store);
  REQUIRE(a.size() == b.size());
  CHECK(!a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].score == b[i].score);
    CHECK(a[i].box.center == b[i].box.center);
  }
  // Survivors of NMS at 0.01 barely overlap each other.
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      if (a[i].box.label == a[j].box.label) CHECK(geo::rotated_iou_3d(a[i].box, a[j].box) <= 0.01);
    }
  }
}
