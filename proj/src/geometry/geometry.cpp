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

#include "halo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::geo {

std::size_t attribute_width(Modality m) { return m == Modality::kLidar ? 1 : 2; }

std::string to_string(Modality m) { return m == Modality::kLidar ? "lidar" : "radar"; }

Modality modality_from_string(const std::string& name) {
  if (name == "lidar") return Modality::kLidar;
  if (name == "radar") return Modality::kRadar;
  throw ConfigError("unknown modality '" + name + "' (expected lidar|radar)");
}

void PointCloud::validate() const {
  if (attributes.size() != positions.size() * attr_width()) {
    throw DimensionError(fmt::format("{} cloud: {} points but {} attribute values",
                                     to_string(modality), positions.size(),
                                     attributes.size()));
  }
  for (const Vec3& p : positions) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw NumericError("non-finite point position");
    }
  }
  for (double a : attributes) {
    if (!std::isfinite(a)) throw NumericError("non-finite point attribute");
  }
}

std::string class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar: return "Car";
    case ObjectClass::kPedestrian: return "Pedestrian";
    case ObjectClass::kCyclist: return "Cyclist";
  }
  throw ContractError("invalid class id");
}

ObjectClass class_from_name(const std::string& name) {
  if (name == "Car") return ObjectClass::kCar;
  if (name == "Pedestrian") return ObjectClass::kPedestrian;
  if (name == "Cyclist") return ObjectClass::kCyclist;
  throw ParseError("unknown class '" + name + "'");
}

void Box3D::validate() const {
  for (double s : size) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractError("box sizes must be positive");
  }
  if (!(yaw > -std::numbers::pi && yaw <= std::numbers::pi)) {
    throw ContractError(fmt::format("box yaw {} outside (-pi, pi]", yaw));
  }
  const int c = static_cast<int>(label);
  if (c < 0 || c >= static_cast<int>(kNumClasses)) throw ContractError("invalid class id");
}

double normalize_yaw(double yaw) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double y = std::fmod(yaw, kTwoPi);
  if (y <= -std::numbers::pi) y += kTwoPi;
  if (y > std::numbers::pi) y -= kTwoPi;
  return y;
}

Vec3 to_box_frame(const Vec3& p, const Box3D& b) {
  const double dx = p[0] - b.center[0], dy = p[1] - b.center[1];
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {c * dx + s * dy, -s * dx + c * dy, p[2] - b.center[2]};
}

Vec3 from_box_frame(const Vec3& local, const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.center[0] + c * local[0] - s * local[1],
          b.center[1] + s * local[0] + c * local[1], b.center[2] + local[2]};
}

bool point_in_box(const Vec3& p, const Box3D& b) {
  const Vec3 q = to_box_frame(p, b);
  for (int k = 0; k < 3; ++k) {
    if (std::abs(q[k]) > 0.5 * b.size[k] + kGeomEps) return false;
  }
  return true;
}

double gt_centeredness(const Vec3& p, const Box3D& b) {
  if (!point_in_box(p, b)) return 0.0;
  const Vec3 q = to_box_frame(p, b);
  double product = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double half = 0.5 * b.size[k];
    const double near_side = std::max(half - q[k], 0.0);
    const double far_side = std::max(half + q[k], 0.0);
    const double hi = std::max(near_side, far_side);
    if (hi <= 0.0) return 0.0;
    product *= std::min(near_side, far_side) / hi;
  }
  return std::cbrt(product);
}

std::optional<std::size_t> containing_box(const Vec3& p, std::span<const Box3D> boxes) {
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!point_in_box(p, boxes[i])) continue;
    const double d = squared_distance(p, boxes[i].center);
    if (!best || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> points,
                                                 std::size_t k,
                                                 std::size_t seed_index) {
  const std::size_t n = points.size();
  if (k > n) {
    throw ContractError(fmt::format("farthest_point_sampling: k={} exceeds {} points", k, n));
  }
  if (k == 0) return {};
  if (seed_index >= n) throw ContractError("farthest_point_sampling: seed index out of range");
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t current = seed_index;
  for (std::size_t s = 0; s < k; ++s) {
    out.push_back(current);
    min_d[current] = -1.0;
    std::size_t next = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d[i] < 0.0) continue;
      min_d[i] = std::min(min_d[i], squared_distance(points[i], points[current]));
      if (min_d[i] > best) {
        best = min_d[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

GroupIndex ball_query(std::span<const Vec3> centers, std::span<const Vec3> points,
                      double radius, std::size_t max_k) {
  if (!(radius > 0.0)) throw ContractError("ball_query: radius must be positive");
  if (max_k == 0) throw ContractError("ball_query: max_k must be at least 1");
  if (points.empty() && !centers.empty()) {
    throw ContractError("ball_query: no points to group");
  }
  const double r2 = radius * radius;
  GroupIndex g;
  g.max_k = max_k;
  g.indices.assign(centers.size() * max_k, 0);
  g.mask.assign(centers.size() * max_k, 0);
  g.valid.assign(centers.size(), 0);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::size_t* idx = g.indices.data() + c * max_k;
    std::uint8_t* mask = g.mask.data() + c * max_k;
    std::size_t found = 0;
    for (std::size_t i = 0; i < points.size() && found < max_k; ++i) {
      if (squared_distance(centers[c], points[i]) <= r2) {
        idx[found] = i;
        mask[found] = 1;
        ++found;
      }
    }
    if (found > 0) {
      g.valid[c] = 1;
      for (std::size_t j = found; j < max_k; ++j) idx[j] = idx[0];
      continue;
    }
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = squared_distance(centers[c], points[i]);
      if (d < best) {
        best = d;
        nearest = i;
      }
    }
    std::fill(idx, idx + max_k, nearest);
  }
  return g;
}

namespace {

using Pt = std::array<double, 2>;

std::vector<Pt> footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size[0], hw = 0.5 * b.size[1];
  const std::array<Pt, 4> local = {{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  // Counter-clockwise.
  std::vector<Pt> out;
  for (const Pt& q : local) {
    out.push_back({b.center[0] + c * q[0] - s * q[1], b.center[1] + s * q[0] + c * q[1]});
  }
  return out;
}

double cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double polygon_area(const std::vector<Pt>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Pt& p = poly[i];
    const Pt& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
std::vector<Pt> clip_polygon(std::vector<Pt> subject, const std::vector<Pt>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Pt& a = clip[e];
    const Pt& b = clip[(e + 1) % clip.size()];
    std::vector<Pt> next;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Pt& p = subject[i];
      const Pt& q = subject[(i + 1) % subject.size()];
      const double cp = cross(a, b, p);
      const double cq = cross(a, b, q);
      const bool p_in = cp >= -kGeomEps;
      const bool q_in = cq >= -kGeomEps;
      if (p_in) next.push_back(p);
      if (p_in != q_in) {
        const double t = cp / (cp - cq);
        next.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
    subject = std::move(next);
  }
  return subject;
}

}  // namespace

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const std::vector<Pt> inter = clip_polygon(footprint(a), footprint(b));
  if (inter.size() < 3) return 0.0;
  return polygon_area(inter);
}

double rotated_iou_3d(const Box3D& a, const Box3D& b) {
  const double z_lo = std::max(a.center[2] - 0.5 * a.size[2], b.center[2] - 0.5 * b.size[2]);
  const double z_hi = std::min(a.center[2] + 0.5 * a.size[2], b.center[2] + 0.5 * b.size[2]);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double area = bev_intersection_area(a, b);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double va = a.size[0] * a.size[1] * a.size[2];
  const double vb = b.size[0] * b.size[1] * b.size[2];
  const double uni = va + vb - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&dets](std::size_t i, std::size_t j) {
    if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
    if (dets[i].box.center[0] != dets[j].box.center[0]) {
      return dets[i].box.center[0] < dets[j].box.center[0];
    }
    return i < j;
  });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t a = 0; a < order.size(); ++a) {
    const std::size_t i = order[a];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const std::size_t j = order[b];
      if (suppressed[j] || dets[j].box.label != dets[i].box.label) continue;
      if (rotated_iou_3d(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

std::vector<std::optional<std::size_t>> radius_nn(std::span<const Vec3> queries,
                                                  std::span<const Vec3> refs,
                                                  double radius) {
  if (!(radius > 0.0)) throw ContractError("radius_nn: radius must be positive");
  const double r2 = radius * radius;
  std::vector<std::optional<std::size_t>> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const double d = squared_distance(queries[q], refs[r]);
      if (d <= r2 && d < best) {
        best = d;
        out[q] = r;
      }
    }
  }
  return out;
}

}  // namespace halo::geo
