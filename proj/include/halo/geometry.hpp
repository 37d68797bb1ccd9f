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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace halo::geo {

using Vec3 = std::array<double, 3>;

enum class Modality { kLidar, kRadar };

// LiDAR-like clouds carry intensity; radar-like clouds carry RCS (dBsm) and
// Doppler (m/s).
std::size_t attribute_width(Modality m);
std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);

// Sensor frame: x forward, y left, z up, meters.
struct PointCloud {
  Modality modality = Modality::kLidar;
  std::vector<Vec3> positions;
  std::vector<double> attributes;  // size() * attribute_width(modality), row-major

  std::size_t size() const { return positions.size(); }
  std::size_t attr_width() const { return attribute_width(modality); }
  std::span<const double> attrs(std::size_t i) const {
    return std::span<const double>(attributes).subspan(i * attr_width(), attr_width());
  }
  void validate() const;

  bool operator==(const PointCloud&) const = default;
};

enum class ObjectClass : int { kCar = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr std::size_t kNumClasses = 3;
std::string class_name(ObjectClass c);
ObjectClass class_from_name(const std::string& name);

struct Box3D {
  Vec3 center{};
  Vec3 size{1.0, 1.0, 1.0};  // length (along heading), width, height
  double yaw = 0.0;          // about z, in (-pi, pi]
  ObjectClass label = ObjectClass::kCar;

  void validate() const;
  bool operator==(const Box3D&) const = default;
};

struct Detection {
  Box3D box;
  double score = 0.0;
};

// Wraps any angle into (-pi, pi].
double normalize_yaw(double yaw);

// Membership and IoU treat faces as inside, up to this slack.
inline constexpr double kGeomEps = 1e-9;

Vec3 to_box_frame(const Vec3& p, const Box3D& b);
Vec3 from_box_frame(const Vec3& local, const Box3D& b);
bool point_in_box(const Vec3& p, const Box3D& b);

// Centeredness target: zero outside the box, otherwise the cube root of the
// product of min/max ratios of the distances to opposite faces along the
// three box axes. 1 at the center, 0 on any face.
double gt_centeredness(const Vec3& p, const Box3D& b);

// Index of the box containing p; when several do, the one whose center is
// nearest (lowest index on ties).
std::optional<std::size_t> containing_box(const Vec3& p, std::span<const Box3D> boxes);

// Greedy max-min selection of k indices starting from seed_index. Ties go to
// the lowest index; output is in selection order.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> points,
                                                 std::size_t k,
                                                 std::size_t seed_index = 0);

// Up to max_k neighbors per center within `radius`, in ascending point index.
// Short groups are padded by repeating their first member (mask = 0 on pads).
// A center with no neighbor gets its nearest point in every slot, mask 0
// everywhere and valid = 0.
struct GroupIndex {
  std::size_t max_k = 0;
  std::vector<std::size_t> indices;  // num_groups() * max_k
  std::vector<std::uint8_t> mask;    // 1 for real members
  std::vector<std::uint8_t> valid;   // per group

  std::size_t num_groups() const { return valid.size(); }
  std::size_t member(std::size_t g, std::size_t j) const { return indices[g * max_k + j]; }
  bool is_member(std::size_t g, std::size_t j) const { return mask[g * max_k + j] != 0; }
};

GroupIndex ball_query(std::span<const Vec3> centers, std::span<const Vec3> points,
                      double radius, std::size_t max_k);

// Area of the intersection of the two yaw-rotated footprints.
double bev_intersection_area(const Box3D& a, const Box3D& b);
double rotated_iou_3d(const Box3D& a, const Box3D& b);

// Class-wise greedy suppression. Candidates are visited by descending score,
// then ascending center x, then input index. Returns kept input indices in
// visiting order.
std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_threshold);
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

// Nearest ref within radius for each query (lowest ref index on distance
// ties); nullopt when none is in range.
std::vector<std::optional<std::size_t>> radius_nn(std::span<const Vec3> queries,
                                                  std::span<const Vec3> refs,
                                                  double radius);

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace halo::geo
