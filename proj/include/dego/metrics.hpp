/* Copyright 2026 The DeGO Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <array>
#include <string>
#include <vector>

#include "dego/core.hpp"

namespace dego {

struct ClassTaxonomy {
  std::array<std::string, kNumClasses> names;

  static const ClassTaxonomy& standard();

  int index_of(const std::string& name) const;  // IndexOutOfRange when unknown

  // HUMAN = {bicycle, motorcycle, pedestrian}; INSTANCE = first 10; SCENE = last 5.
  static constexpr int kHumanCount = 3;
  static constexpr int kInstanceCount = 10;
  static bool is_human(int c) { return c >= 0 && c < kHumanCount; }
  static bool is_instance(int c) { return c >= 0 && c < kInstanceCount; }
  static bool is_scene(int c) { return c >= kInstanceCount && c < kNumClasses; }
};

struct ConfusionCounts {
  std::array<int64_t, kNumClasses> intersection{};
  std::array<int64_t, kNumClasses> union_{};
  int64_t geo_intersection = 0;
  int64_t geo_union = 0;

  void accumulate(const ConfusionCounts& other);
};

/// Per-class and geometric (occupied-vs-occupied) voxel tallies. `visible`,
/// when non-null, restricts counting to voxels with a nonzero mask byte.
ConfusionCounts confusion(const SemanticLabelGrid& pred, const SemanticLabelGrid& gt,
                          const std::vector<uint8_t>* visible = nullptr);

struct AggregateReport {
  std::array<double, kNumClasses> per_class{};  // NaN where undefined
  std::array<bool, kNumClasses> defined{};
  double miou = 0.0;
  double insm = 0.0;
  double scnm = 0.0;
  double hcm = 0.0;
  double iou = 0.0;  // geometric
};

AggregateReport aggregate(const ConfusionCounts& counts);

/// Group means straight from per-class IoUs (scale-agnostic); classes with
/// defined[c] == false are excluded from every mean.
AggregateReport aggregate_from_ious(const std::array<double, kNumClasses>& per_class,
                                    const std::array<bool, kNumClasses>& defined, double geo_iou);

// ---- exact voxel traversal ---------------------------------------------------

struct VoxelHit {
  bool hit = false;
  Eigen::Vector3i idx{0, 0, 0};
  double t_enter = 0.0;  // distance along the unit ray to the entry face
  uint8_t label = kFreeLabel;
};

/// First occupied voxel along origin + t*dir (dir unit), t >= 0.
VoxelHit first_occupied_voxel(const SemanticLabelGrid& grid, const Vec3& origin, const Vec3& dir);

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

/// One ray per pixel center of every camera, in world coordinates.
std::vector<Ray> camera_rays(const CameraModel& camera);

struct RayIoUResult {
  std::vector<double> thresholds;
  std::vector<double> at;  // RayIoU per threshold
  double mean = 0.0;
};

RayIoUResult ray_iou(const SemanticLabelGrid& pred, const SemanticLabelGrid& gt,
                     const std::vector<Ray>& rays,
                     const std::vector<double>& thresholds = {1.0, 2.0, 4.0});

/// Voxels some camera ray reaches at or before its first occupied hit.
std::vector<uint8_t> visible_mask(const SemanticLabelGrid& gt,
                                  const std::vector<CameraModel>& cameras);

}  // namespace dego
