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

#include <string>
#include <utility>
#include <vector>

#include "dego/core.hpp"
#include "dego/metrics.hpp"

namespace dego {

struct ShapeSpec {
  enum class Kind { Box, Cylinder };
  Kind kind = Kind::Box;
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();  // cylinder: x = radius, z = half height

  bool contains(const Vec3& p, const Vec3& center_t, double pulse) const;
  void aabb(const Vec3& center_t, double pulse, Vec3& lo, Vec3& hi) const;
};

struct TrajectorySpec {
  enum class Kind { None, Linear, Sinusoidal };
  Kind kind = Kind::None;
  Vec3 velocity = Vec3::Zero();   // linear, meters per frame
  Vec3 amplitude = Vec3::Zero();  // sinusoidal, meters
  double period = 8.0;            // frames

  Vec3 displacement(double t) const;
};

struct PulseSpec {
  double amplitude = 0.0;  // relative scale oscillation
  double period = 8.0;
  double phase = 0.0;

  double factor(double t) const;
};

struct SceneObject {
  int class_id = 0;
  ShapeSpec shape;
  TrajectorySpec trajectory;
  PulseSpec pulse;

  Vec3 center_at(double t) const { return shape.center + trajectory.displacement(t); }
  double mean_speed(int frames) const;  // per-frame centroid speed over the clip
};

struct CameraRigSpec {
  int count = 4;
  int width = 112;
  int height = 64;
  double fov_deg = 70.0;
  double radius_fraction = 0.46;  // of the half extent
  double height_fraction = 0.85;  // of the grid z extent
};

struct SceneRecipe {
  uint64_t seed = 1;
  VoxelGridSpec grid;
  int frames = 17;  // odd; offsets -T..T with T = (frames-1)/2
  std::vector<SceneObject> statics;
  std::vector<SceneObject> movers;
  CameraRigSpec rig;
  double label_flip_rate = 0.0;  // pseudo-label noise knobs, default off
  double depth_jitter = 0.0;
};

SceneRecipe default_recipe();

struct SyntheticScene {
  SceneRecipe recipe;
  std::vector<CameraModel> cameras;
  std::vector<SemanticLabelGrid> gt;                   // per frame
  std::vector<std::vector<std::vector<float>>> depth;  // [frame][camera][pixel]
  std::vector<std::vector<std::vector<uint8_t>>> seg;  // [frame][camera][pixel]

  int frames() const { return recipe.frames; }
  int max_offset() const { return (recipe.frames - 1) / 2; }
  int frame_of_offset(int t) const { return t + max_offset(); }
  const VoxelGridSpec& grid() const { return recipe.grid; }
};

/// Pure function of the recipe: voxelized analytic shapes per frame plus
/// ray-cast pseudo labels for every camera. OutOfGrid when any object leaves
/// the grid at any frame.
SyntheticScene generate_scene(const SceneRecipe& recipe);

/// Exact-traversal depth (to the entry face) and class id per pixel;
/// no hit yields depth 0 and IGNORE.
std::pair<std::vector<float>, std::vector<uint8_t>> pseudo_labels(const SemanticLabelGrid& frame,
                                                                  const CameraModel& camera);

std::vector<CameraModel> build_rig(const CameraRigSpec& rig, const VoxelGridSpec& grid);

/// Content hash over grids, maps, and cameras; layout-independent.
std::string scene_hash(const SyntheticScene& scene);

/// For every pixel of the reference frame: mean per-frame speed of the object
/// the pixel's first hit belongs to (0 for statics and misses).
std::vector<double> object_speed_map(const SyntheticScene& scene, int camera_index);

// scene directory layout: scene.json, gt/frame_{k}.vox,
// labels/frame_{k}_cam_{v}.depth.img / .seg.img
void save_scene(const SyntheticScene& scene, const std::string& dir);
SyntheticScene load_scene(const std::string& dir);

// recipe JSON (same schema embedded in scene.json)
SceneRecipe parse_recipe_file(const std::string& path);
std::string recipe_to_json_string(const SceneRecipe& recipe);

}  // namespace dego
