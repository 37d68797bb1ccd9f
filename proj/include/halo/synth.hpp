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
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/geometry.hpp"
#include "halo/random.hpp"

namespace halo::data {

// Object layout of one scene. The sensor sits at the origin looking along +x.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t min_objects = 2;
  std::size_t max_objects = 6;
  std::array<double, geo::kNumClasses> class_probs = {0.5, 0.25, 0.25};
  double x_min = 3.0;
  double x_max = 28.0;
  double y_half = 12.0;
  double size_jitter = 0.1;      // relative, uniform +-
  double min_gap = 0.5;          // meters between boxes
  double static_fraction = 0.3;
  double max_speed = 10.0;       // per planar component, m/s
  std::size_t max_retries = 2000;

  void validate() const;
};

struct ModalityProfile {
  geo::Modality modality = geo::Modality::kLidar;
  std::size_t num_points = 2048;
  double noise_sigma = 0.02;
  double dropout = 0.0;  // probability an object returns no points
  // Dense profiles sample box surfaces at `surface_density` points per m^2
  // (at least `min_object_points`); sparse profiles draw a Poisson count with
  // the per-class mean.
  bool dense = true;
  double surface_density = 12.0;
  std::size_t min_object_points = 20;
  double max_object_share = 0.7;  // of num_points
  std::array<double, geo::kNumClasses> mean_points = {8.0, 3.0, 4.0};
  // Objects fill this fraction of their box along each axis, like an
  // annotation box that leaves a margin around the object.
  double object_fill = 0.9;
  // Pad with clutter up to num_points; without it the cloud holds object
  // points only.
  bool fill_clutter = true;

  void validate() const;
};

ModalityProfile lidar_profile(const std::string& scale);  // "toy" | "paper"
ModalityProfile radar_profile(const std::string& scale);

// Base (length, width, height) per class before jitter.
geo::Vec3 class_base_size(geo::ObjectClass c);
// Radar cross-section per class (dBsm), independent of distance.
double class_rcs(geo::ObjectClass c);
double class_reflectivity(geo::ObjectClass c);
// reflectivity / (1 + d^2 / 100)
double lidar_intensity(double reflectivity, double distance);

struct PairedScene {
  geo::PointCloud lidar;
  geo::PointCloud radar;
  std::vector<geo::Box3D> gt;
  std::vector<geo::Vec3> velocity;  // per box

  const geo::PointCloud& cloud(geo::Modality m) const {
    return m == geo::Modality::kLidar ? lidar : radar;
  }
  void validate() const;
  bool operator==(const PairedScene&) const = default;
};

// Object points first (box by box), then clutter up to the profile count.
PairedScene generate_scene(const SceneSpec& spec, const ModalityProfile& lidar,
                           const ModalityProfile& radar);

enum class AugmentMode { kNone, kLidarFull, kRadarFlipOnly };
AugmentMode augment_mode_for(geo::Modality m);

// Mirror across the x axis (y -> -y, yaw -> -yaw); Doppler is unchanged.
void flip_y(PairedScene& scene);
// Rotation about z through the sensor origin.
void rotate_z(PairedScene& scene, double angle);
void scale_world(PairedScene& scene, double factor);

// kLidarFull: flip with probability 0.5, rotation in [-pi/4, pi/4], scaling in
// [0.95, 1.05]. kRadarFlipOnly: the flip alone.
void augment_scene(PairedScene& scene, AugmentMode mode, Rng& rng);

// {"format":"halo-scene-v1","gt":[{"class","center","size","yaw","velocity"}],
//  "lidar":{"positions":[[x,y,z]..],"attrs":[[i]..]},
//  "radar":{"positions":..,"attrs":[[rcs,doppler]..]}}
nlohmann::json scene_to_json(const PairedScene& scene);
PairedScene scene_from_json(const nlohmann::json& j);
void write_scene(const PairedScene& scene, const std::filesystem::path& path);
PairedScene read_scene(const std::filesystem::path& path);

struct DatasetManifest {
  std::string profile;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> splits;  // split -> file names

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

inline constexpr double kTrainFraction = 0.8;

// Scene i uses seed mix(seed, i); the first 80% form "train", the rest "val".
DatasetManifest generate_dataset(const std::filesystem::path& dir, std::size_t num_scenes,
                                 std::uint64_t seed, const std::string& profile);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<PairedScene> load_split(const std::filesystem::path& dir, const std::string& split);

std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index);

}  // namespace halo::data
