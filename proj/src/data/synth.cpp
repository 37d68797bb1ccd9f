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

#include "halo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::data {

using geo::Box3D;
using geo::Modality;
using geo::ObjectClass;
using geo::Vec3;
using nlohmann::json;

namespace {

constexpr std::uint64_t kLidarStream = 0x6c696461720000a1ULL;
constexpr std::uint64_t kRadarStream = 0x7261646172000b2ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t poisson(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  std::size_t k = 0;
  double p = rng.uniform();
  while (p > limit) {
    ++k;
    p *= rng.uniform();
  }
  return k;
}

ObjectClass draw_class(Rng& rng, const std::array<double, geo::kNumClasses>& probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c < geo::kNumClasses; ++c) {
    if (u < probs[c]) return static_cast<ObjectClass>(c);
    u -= probs[c];
  }
  return static_cast<ObjectClass>(geo::kNumClasses - 1);
}

double surface_area(const Vec3& s) { return 2.0 * (s[0] * s[1] + s[0] * s[2] + s[1] * s[2]); }

// Uniform point on the box surface, in the box frame.
Vec3 surface_point(Rng& rng, const Vec3& s) {
  const std::array<double, 3> face = {s[1] * s[2], s[0] * s[2], s[0] * s[1]};  // normal x, y, z
  double u = rng.uniform() * (face[0] + face[1] + face[2]);
  std::size_t axis = 0;
  while (axis < 2 && u >= face[axis]) u -= face[axis++];
  Vec3 local;
  for (std::size_t k = 0; k < 3; ++k) local[k] = rng.uniform(-0.5, 0.5) * s[k];
  local[axis] = (rng.bernoulli(0.5) ? 0.5 : -0.5) * s[axis];
  return local;
}

Vec3 interior_point(Rng& rng, const Vec3& s) {
  return {rng.uniform(-0.5, 0.5) * s[0], rng.uniform(-0.5, 0.5) * s[1],
          rng.uniform(-0.5, 0.5) * s[2]};
}

double norm(const Vec3& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); }

void push_attributes(geo::PointCloud& cloud, const Vec3& p, double refl, double rcs,
                     const Vec3& velocity) {
  const double d = norm(p);
  if (cloud.modality == Modality::kLidar) {
    cloud.attributes.push_back(lidar_intensity(refl, d));
  } else {
    cloud.attributes.push_back(rcs);
    const double doppler =
        d > 0.0 ? (velocity[0] * p[0] + velocity[1] * p[1] + velocity[2] * p[2]) / d : 0.0;
    cloud.attributes.push_back(doppler);
  }
}

std::vector<std::size_t> object_counts(Rng& rng, const ModalityProfile& prof,
                                       const std::vector<Box3D>& boxes) {
  std::vector<std::size_t> counts;
  const auto cap = static_cast<std::size_t>(prof.max_object_share *
                                            static_cast<double>(prof.num_points));
  if (prof.dense) {
    double want = 0.0;
    for (const auto& b : boxes) want += prof.surface_density * surface_area(b.size);
    const double shrink = want > static_cast<double>(cap) ? static_cast<double>(cap) / want : 1.0;
    for (const auto& b : boxes) {
      const double n = std::round(prof.surface_density * surface_area(b.size) * shrink);
      counts.push_back(std::max(prof.min_object_points, static_cast<std::size_t>(n)));
    }
  } else {
    for (const auto& b : boxes) {
      const bool dropped = rng.bernoulli(prof.dropout);
      const std::size_t n = poisson(rng, prof.mean_points[static_cast<std::size_t>(b.label)]);
      counts.push_back(dropped ? 0 : n);
    }
  }
  // Never exceed the point budget.
  std::size_t total = 0;
  for (auto& c : counts) {
    c = std::min(c, prof.num_points - std::min(total, prof.num_points));
    total += c;
  }
  return counts;
}

geo::PointCloud sample_cloud(Rng& rng, const ModalityProfile& prof, const SceneSpec& spec,
                             const std::vector<Box3D>& boxes,
                             const std::vector<Vec3>& velocity) {
  geo::PointCloud cloud;
  cloud.modality = prof.modality;
  const auto counts = object_counts(rng, prof, boxes);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Box3D& box = boxes[b];
    for (std::size_t i = 0; i < counts[b]; ++i) {
      Vec3 body = box.size;
      for (double& v : body) v *= prof.object_fill;
      const Vec3 local = prof.dense || rng.bernoulli(0.5) ? surface_point(rng, body)
                                                          : interior_point(rng, body);
      Vec3 p = geo::from_box_frame(local, box);
      if (prof.noise_sigma > 0.0) {
        for (double& v : p) v += prof.noise_sigma * rng.normal();
      }
      cloud.positions.push_back(p);
      push_attributes(cloud, p, class_reflectivity(box.label), class_rcs(box.label), velocity[b]);
    }
  }
  // Clutter: half on the ground, half floating, never inside a box.
  const Vec3 still = {0.0, 0.0, 0.0};
  std::size_t attempts = 0;
  const std::size_t budget = 100 * prof.num_points + 1000;
  while (prof.fill_clutter && cloud.positions.size() < prof.num_points) {
    if (++attempts > budget) throw GenerationError("clutter sampling exceeded its retry budget");
    const bool ground = rng.bernoulli(0.5);
    const Vec3 p = {rng.uniform(0.0, spec.x_max), rng.uniform(-spec.y_half, spec.y_half),
                    ground ? rng.uniform(-0.1, 0.0) : rng.uniform(0.0, 3.0)};
    const double refl = rng.uniform(0.05, 0.4);
    const double rcs = rng.uniform(-15.0, 5.0);
    if (geo::containing_box(p, boxes)) continue;
    cloud.positions.push_back(p);
    push_attributes(cloud, p, refl, rcs, still);
  }
  return cloud;
}

const json& field(const json& j, const char* name, const std::string& ctx) {
  if (!j.is_object()) throw ParseError(fmt::format("{}: expected an object", ctx));
  const auto it = j.find(name);
  if (it == j.end()) throw ParseError(fmt::format("{}: missing field '{}'", ctx, name));
  return *it;
}

template <typename T>
T get_as(const json& j, const char* name, const std::string& ctx) {
  const json& v = field(j, name, ctx);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}.{}: {}", ctx, name, e.what()));
  }
}

geo::PointCloud cloud_from_json(const json& j, Modality m, const std::string& ctx) {
  geo::PointCloud c;
  c.modality = m;
  c.positions = get_as<std::vector<Vec3>>(j, "positions", ctx);
  const auto attrs = get_as<std::vector<std::vector<double>>>(j, "attrs", ctx);
  if (attrs.size() != c.positions.size()) {
    throw ParseError(fmt::format("{}.attrs: {} rows for {} positions", ctx, attrs.size(),
                                 c.positions.size()));
  }
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (attrs[i].size() != c.attr_width()) {
      throw ParseError(fmt::format("{}.attrs[{}]: expected {} values", ctx, i, c.attr_width()));
    }
    c.attributes.insert(c.attributes.end(), attrs[i].begin(), attrs[i].end());
  }
  return c;
}

json cloud_to_json(const geo::PointCloud& c) {
  json attrs = json::array();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto a = c.attrs(i);
    attrs.push_back(std::vector<double>(a.begin(), a.end()));
  }
  return {{"positions", c.positions}, {"attrs", attrs}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ParseError(fmt::format("{}:{}: {}", path.string(), line, e.what()));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw ConfigError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

void SceneSpec::validate() const {
  if (min_objects > max_objects) throw ConfigError("scene spec: min_objects > max_objects");
  if (!(x_max > x_min) || !(x_min >= 0.0) || !(y_half > 0.0)) {
    throw ConfigError("scene spec: invalid extent");
  }
  if (!(size_jitter >= 0.0 && size_jitter < 1.0)) throw ConfigError("scene spec: size_jitter");
  if (!(static_fraction >= 0.0 && static_fraction <= 1.0)) {
    throw ConfigError("scene spec: static_fraction");
  }
}

void ModalityProfile::validate() const {
  if (num_points == 0) throw ConfigError("modality profile: num_points must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("modality profile: noise_sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("modality profile: dropout");
  if (!(object_fill > 0.0 && object_fill <= 1.0)) throw ConfigError("modality profile: object_fill");
}

ModalityProfile lidar_profile(const std::string& scale) {
  ModalityProfile p;
  p.modality = Modality::kLidar;
  p.dense = true;
  p.noise_sigma = 0.02;
  if (scale == "toy") {
    p.num_points = 2048;
    p.surface_density = 12.0;
  } else if (scale == "paper") {
    p.num_points = 16384;
    p.surface_density = 60.0;
  } else {
    throw ConfigError("unknown profile '" + scale + "'");
  }
  return p;
}

ModalityProfile radar_profile(const std::string& scale) {
  ModalityProfile p;
  p.modality = Modality::kRadar;
  p.dense = false;
  p.noise_sigma = 0.15;
  p.dropout = 0.1;
  p.mean_points = {8.0, 3.0, 4.0};
  if (scale == "toy") {
    p.num_points = 128;
  } else if (scale == "paper") {
    p.num_points = 512;
  } else {
    throw ConfigError("unknown profile '" + scale + "'");
  }
  return p;
}

Vec3 class_base_size(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar: return {4.0, 1.8, 1.6};
    case ObjectClass::kPedestrian: return {0.6, 0.6, 1.7};
    case ObjectClass::kCyclist: return {1.8, 0.6, 1.7};
  }
  return {1.0, 1.0, 1.0};
}

double class_rcs(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar: return 10.0;
    case ObjectClass::kPedestrian: return -5.0;
    case ObjectClass::kCyclist: return 0.0;
  }
  return 0.0;
}

double class_reflectivity(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar: return 0.9;
    case ObjectClass::kPedestrian: return 0.5;
    case ObjectClass::kCyclist: return 0.7;
  }
  return 0.5;
}

double lidar_intensity(double reflectivity, double distance) {
  return reflectivity / (1.0 + distance * distance / 100.0);
}

void PairedScene::validate() const {
  lidar.validate();
  radar.validate();
  if (lidar.modality != Modality::kLidar || radar.modality != Modality::kRadar) {
    throw ContractError("paired scene: cloud modalities swapped");
  }
  if (velocity.size() != gt.size()) throw ContractError("paired scene: one velocity per box");
  for (const auto& b : gt) b.validate();
}

PairedScene generate_scene(const SceneSpec& spec, const ModalityProfile& lidar,
                           const ModalityProfile& radar) {
  spec.validate();
  lidar.validate();
  radar.validate();
  if (lidar.modality != Modality::kLidar || radar.modality != Modality::kRadar) {
    throw ConfigError("generate_scene: expected a LiDAR and a radar profile");
  }
  Rng rng(spec.seed);
  PairedScene scene;
  const std::size_t n_obj =
      spec.min_objects + rng.index(spec.max_objects - spec.min_objects + 1);
  for (std::size_t o = 0; o < n_obj; ++o) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      Box3D b;
      b.label = draw_class(rng, spec.class_probs);
      const Vec3 base = class_base_size(b.label);
      for (std::size_t k = 0; k < 3; ++k) {
        b.size[k] = base[k] * (1.0 + rng.uniform(-spec.size_jitter, spec.size_jitter));
      }
      // Keep the whole footprint inside the extent.
      const double r = 0.5 * std::hypot(b.size[0], b.size[1]);
      b.center = {rng.uniform(spec.x_min + r, spec.x_max - r),
                  rng.uniform(-spec.y_half + r, spec.y_half - r), 0.5 * b.size[2]};
      b.yaw = geo::normalize_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi));
      // Grown copies must not touch, which keeps IoU at 0 with a margin.
      Box3D grown = b;
      for (double& s : grown.size) s += spec.min_gap;
      placed = std::all_of(scene.gt.begin(), scene.gt.end(), [&](const Box3D& other) {
        Box3D og = other;
        for (double& s : og.size) s += spec.min_gap;
        return geo::bev_intersection_area(grown, og) == 0.0;
      });
      if (placed) scene.gt.push_back(b);
    }
    if (!placed) {
      throw GenerationError(fmt::format("box placement exceeded {} retries (seed {})",
                                        spec.max_retries, spec.seed));
    }
  }
  for (std::size_t o = 0; o < scene.gt.size(); ++o) {
    if (rng.bernoulli(spec.static_fraction)) {
      scene.velocity.push_back({0.0, 0.0, 0.0});
    } else {
      // Signed speed along the heading.
      const double speed = rng.uniform(-spec.max_speed, spec.max_speed);
      const double yaw = scene.gt[o].yaw;
      scene.velocity.push_back({speed * std::cos(yaw), speed * std::sin(yaw), 0.0});
    }
  }
  Rng lidar_rng(spec.seed ^ kLidarStream);
  Rng radar_rng(spec.seed ^ kRadarStream);
  scene.lidar = sample_cloud(lidar_rng, lidar, spec, scene.gt, scene.velocity);
  scene.radar = sample_cloud(radar_rng, radar, spec, scene.gt, scene.velocity);
  return scene;
}

AugmentMode augment_mode_for(Modality m) {
  return m == Modality::kLidar ? AugmentMode::kLidarFull : AugmentMode::kRadarFlipOnly;
}

void flip_y(PairedScene& scene) {
  for (auto* cloud : {&scene.lidar, &scene.radar}) {
    for (auto& p : cloud->positions) p[1] = -p[1];
  }
  for (auto& b : scene.gt) {
    b.center[1] = -b.center[1];
    b.yaw = geo::normalize_yaw(-b.yaw);
  }
  for (auto& v : scene.velocity) v[1] = -v[1];
}

void rotate_z(PairedScene& scene, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  auto rot = [c, s](Vec3& p) {
    const double x = c * p[0] - s * p[1];
    const double y = s * p[0] + c * p[1];
    p[0] = x;
    p[1] = y;
  };
  for (auto* cloud : {&scene.lidar, &scene.radar}) {
    for (auto& p : cloud->positions) rot(p);
  }
  for (auto& b : scene.gt) {
    rot(b.center);
    b.yaw = geo::normalize_yaw(b.yaw + angle);
  }
  for (auto& v : scene.velocity) rot(v);
}

void scale_world(PairedScene& scene, double factor) {
  if (!(factor > 0.0)) throw ContractError("scale_world: factor must be positive");
  for (auto* cloud : {&scene.lidar, &scene.radar}) {
    for (auto& p : cloud->positions) {
      for (double& v : p) v *= factor;
    }
  }
  for (auto& b : scene.gt) {
    for (double& v : b.center) v *= factor;
    for (double& v : b.size) v *= factor;
  }
}

void augment_scene(PairedScene& scene, AugmentMode mode, Rng& rng) {
  if (mode == AugmentMode::kNone) return;
  if (rng.bernoulli(0.5)) flip_y(scene);
  if (mode == AugmentMode::kRadarFlipOnly) return;
  rotate_z(scene, rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4));
  scale_world(scene, rng.uniform(0.95, 1.05));
}

json scene_to_json(const PairedScene& scene) {
  json gt = json::array();
  for (std::size_t i = 0; i < scene.gt.size(); ++i) {
    const Box3D& b = scene.gt[i];
    gt.push_back({{"class", geo::class_name(b.label)},
                  {"center", b.center},
                  {"size", b.size},
                  {"yaw", b.yaw},
                  {"velocity", scene.velocity[i]}});
  }
  return {{"format", "halo-scene-v1"},
          {"gt", gt},
          {"lidar", cloud_to_json(scene.lidar)},
          {"radar", cloud_to_json(scene.radar)}};
}

PairedScene scene_from_json(const json& j) {
  const std::string format = get_as<std::string>(j, "format", "scene");
  if (format != "halo-scene-v1") {
    throw ParseError(fmt::format("scene.format: unsupported '{}'", format));
  }
  PairedScene scene;
  const json& gt = field(j, "gt", "scene");
  if (!gt.is_array()) throw ParseError("scene.gt: expected an array");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::string ctx = fmt::format("scene.gt[{}]", i);
    Box3D b;
    const std::string cls = get_as<std::string>(gt[i], "class", ctx);
    try {
      b.label = geo::class_from_name(cls);
    } catch (const Error& e) {
      throw ParseError(fmt::format("{}.class: {}", ctx, e.what()));
    }
    b.center = get_as<Vec3>(gt[i], "center", ctx);
    b.size = get_as<Vec3>(gt[i], "size", ctx);
    b.yaw = get_as<double>(gt[i], "yaw", ctx);
    try {
      b.validate();
    } catch (const Error& e) {
      throw ParseError(fmt::format("{}: {}", ctx, e.what()));
    }
    scene.gt.push_back(b);
    scene.velocity.push_back(get_as<Vec3>(gt[i], "velocity", ctx));
  }
  scene.lidar = cloud_from_json(field(j, "lidar", "scene"), Modality::kLidar, "scene.lidar");
  scene.radar = cloud_from_json(field(j, "radar", "scene"), Modality::kRadar, "scene.radar");
  try {
    scene.validate();
  } catch (const Error& e) {
    throw ParseError(fmt::format("scene: {}", e.what()));
  }
  return scene;
}

void write_scene(const PairedScene& scene, const std::filesystem::path& path) {
  write_text(path, scene_to_json(scene).dump());
}

PairedScene read_scene(const std::filesystem::path& path) {
  try {
    return scene_from_json(read_json_file(path));
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ParseError(fmt::format("{}: {}", path.string(), msg));
  }
}

json DatasetManifest::to_json() const {
  return {{"format", "halo-dataset-v1"}, {"profile", profile}, {"seed", seed}, {"splits", splits}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  if (get_as<std::string>(j, "format", "manifest") != "halo-dataset-v1") {
    throw ParseError("manifest.format: unsupported");
  }
  m.profile = get_as<std::string>(j, "profile", "manifest");
  m.seed = get_as<std::uint64_t>(j, "seed", "manifest");
  m.splits = get_as<std::map<std::string, std::vector<std::string>>>(j, "splits", "manifest");
  return m;
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) + static_cast<std::uint64_t>(index));
}

DatasetManifest generate_dataset(const std::filesystem::path& dir, std::size_t num_scenes,
                                 std::uint64_t seed, const std::string& profile) {
  const ModalityProfile lidar = lidar_profile(profile);
  const ModalityProfile radar = radar_profile(profile);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  DatasetManifest m;
  m.profile = profile;
  m.seed = seed;
  const auto n_train = static_cast<std::size_t>(
      std::llround(kTrainFraction * static_cast<double>(num_scenes)));
  auto& train = m.splits["train"];
  auto& val = m.splits["val"];
  for (std::size_t i = 0; i < num_scenes; ++i) {
    SceneSpec spec;
    spec.seed = scene_seed(seed, i);
    if (profile == "paper") spec.max_objects = 10;
    const std::string name = fmt::format("scene_{:05d}.json", i);
    write_scene(generate_scene(spec, lidar, radar), dir / name);
    (i < n_train ? train : val).push_back(name);
  }
  write_text(dir / "manifest.json", m.to_json().dump(2));
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  try {
    return DatasetManifest::from_json(read_json_file(dir / "manifest.json"));
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", (dir / "manifest.json").string(), e.what()));
  }
}

std::vector<PairedScene> load_split(const std::filesystem::path& dir, const std::string& split) {
  const DatasetManifest m = read_manifest(dir);
  const auto it = m.splits.find(split);
  if (it == m.splits.end()) {
    throw ConfigError(fmt::format("dataset '{}' has no split '{}'", dir.string(), split));
  }
  std::vector<PairedScene> scenes;
  for (const auto& name : it->second) scenes.push_back(read_scene(dir / name));
  return scenes;
}

}  // namespace halo::data
