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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "dego/synthsuite.hpp"
#include "support.hpp"

using namespace dego;

namespace {

int64_t count_class(const SemanticLabelGrid& grid, int cls) {
  return std::count(grid.labels.begin(), grid.labels.end(), static_cast<uint8_t>(cls));
}

Vec3 class_centroid(const SemanticLabelGrid& grid, int cls) {
  Vec3 acc = Vec3::Zero();
  int64_t n = 0;
  for (int ix = 0; ix < grid.spec.dims[0]; ++ix)
    for (int iy = 0; iy < grid.spec.dims[1]; ++iy)
      for (int iz = 0; iz < grid.spec.dims[2]; ++iz)
        if (grid.at(ix, iy, iz) == cls) {
          acc += grid.spec.voxel_center(ix, iy, iz);
          ++n;
        }
  return n > 0 ? Vec3(acc / n) : acc;
}

}  // namespace

TEST_CASE("a static unit box labels exactly eight voxels in every frame") {
  SceneRecipe recipe;
  recipe.grid = make_grid_spec(Vec3(0, 0, 0), Vec3(4, 4, 2), 0.5);
  recipe.frames = 5;
  SceneObject box;
  box.class_id = 13;
  box.shape = {ShapeSpec::Kind::Box, Vec3(2.0, 2.0, 1.0), Vec3(0.5, 0.5, 0.5)};
  recipe.statics.push_back(box);
  recipe.rig.count = 1;
  recipe.rig.width = 16;
  recipe.rig.height = 16;

  SyntheticScene scene = generate_scene(recipe);
  for (const auto& frame : scene.gt) CHECK(count_class(frame, 13) == 8);
}

TEST_CASE("linear mover displaces its centroid by v per frame") {
  SceneRecipe recipe;
  recipe.grid = make_grid_spec(Vec3(-4, -4, 0), Vec3(4, 4, 2), 0.25);
  recipe.frames = 9;
  SceneObject walker;
  walker.class_id = 2;
  walker.shape = {ShapeSpec::Kind::Cylinder, Vec3(0, 0, 0.75), Vec3(0.5, 0.5, 0.6)};
  walker.trajectory.kind = TrajectorySpec::Kind::Linear;
  walker.trajectory.velocity = Vec3(0.5, 0.25, 0);
  recipe.movers.push_back(walker);
  recipe.rig.width = 16;
  recipe.rig.height = 16;

  SyntheticScene scene = generate_scene(recipe);
  for (int k = 0; k + 1 < scene.frames(); ++k) {
    Vec3 delta = class_centroid(scene.gt[k + 1], 2) - class_centroid(scene.gt[k], 2);
    CHECK((delta - walker.trajectory.velocity).norm() < 0.5 * recipe.grid.voxel_size);
  }
}

TEST_CASE("mover voxel count stays within the pulse bound") {
  SceneRecipe recipe;
  recipe.grid = make_grid_spec(Vec3(-4, -4, 0), Vec3(4, 4, 3), 0.25);
  recipe.frames = 17;
  SceneObject walker;
  walker.class_id = 2;
  walker.shape = {ShapeSpec::Kind::Cylinder, Vec3(0, 0, 1.3), Vec3(0.9, 0.9, 1.0)};
  walker.trajectory.kind = TrajectorySpec::Kind::Linear;
  walker.trajectory.velocity = Vec3(0.15, 0.1, 0);
  walker.pulse = {0.2, 8.0, 0.0};
  recipe.movers.push_back(walker);
  recipe.rig.width = 16;
  recipe.rig.height = 16;

  SyntheticScene scene = generate_scene(recipe);
  std::vector<int64_t> counts;
  for (const auto& frame : scene.gt) counts.push_back(count_class(frame, 2));
  const double base = static_cast<double>(counts[scene.frame_of_offset(0)]);
  // Cylinder volume scales as pulse^3; allow one voxel shell of slack around
  // the +-20% amplitude bound.
  const double shell = 6.0 * std::pow(base, 2.0 / 3.0);
  for (int64_t c : counts) {
    CHECK(c >= 0.8 * 0.8 * 0.8 * base - shell);
    CHECK(c <= 1.2 * 1.2 * 1.2 * base + shell);
  }
  // The pulse actually changes the voxel count somewhere in the clip.
  CHECK(*std::max_element(counts.begin(), counts.end()) >
        *std::min_element(counts.begin(), counts.end()));
}

TEST_CASE("generation is deterministic and movers must stay inside") {
  SceneRecipe recipe = default_recipe();
  recipe.rig.width = 24;
  recipe.rig.height = 16;
  SyntheticScene a = generate_scene(recipe);
  SyntheticScene b = generate_scene(recipe);
  CHECK(scene_hash(a) == scene_hash(b));

  SceneRecipe bad = recipe;
  bad.movers[0].trajectory.velocity = Vec3(2.0, 0, 0);  // exits by offset 8
  try {
    generate_scene(bad);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfGrid);
  }
}

TEST_CASE("pseudo labels: empty grid, wall depth, ray exits") {
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(8, 4, 4), 0.5);
  SemanticLabelGrid empty(spec);

  CameraModel cam;
  cam.width = 32;
  cam.height = 24;
  double f = 0.5 * cam.width / std::tan(0.5 * 70.0 * M_PI / 180.0);
  cam.K << f, 0, cam.width / 2.0, 0, f, cam.height / 2.0, 0, 0, 1;
  Mat3 R;
  R << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // looks down +x, y-down right-handed
  cam.E.topLeftCorner<3, 3>() = R;
  Vec3 pos(-3.0, 2.0, 2.0);
  cam.E.topRightCorner<3, 1>() = -R * pos;
  cam.validate();

  auto [d0, s0] = pseudo_labels(empty, cam);
  CHECK(std::all_of(d0.begin(), d0.end(), [](float v) { return v == 0.0f; }));
  CHECK(std::all_of(s0.begin(), s0.end(), [](uint8_t v) { return v == kIgnoreLabel; }));

  // Wall at x in [5, 5.5): the center-pixel ray travels straight down +x,
  // entry face at x = 5 -> depth 8 from the camera at x = -3.
  SemanticLabelGrid wall(spec);
  for (int iy = 0; iy < spec.dims[1]; ++iy)
    for (int iz = 0; iz < spec.dims[2]; ++iz) wall.at(10, iy, iz) = 7;
  auto [d1, s1] = pseudo_labels(wall, cam);
  const int64_t center = (cam.height / 2) * cam.width + cam.width / 2;
  CHECK(d1[center] == doctest::Approx(8.0).epsilon(0.26 / 8.0));
  CHECK(s1[center] == 7);

  // Consistency: seg != IGNORE iff depth > 0.
  for (size_t i = 0; i < d1.size(); ++i) CHECK((s1[i] != kIgnoreLabel) == (d1[i] > 0.0f));
}

TEST_CASE("scene save/load round trip preserves the digest") {
  test::TempDir dir("scene");
  SceneRecipe recipe = default_recipe();
  recipe.rig.width = 24;
  recipe.rig.height = 16;
  recipe.frames = 5;
  SyntheticScene scene = generate_scene(recipe);
  const std::string digest = scene_hash(scene);

  save_scene(scene, dir.str());
  SyntheticScene loaded = load_scene(dir.str());
  CHECK(scene_hash(loaded) == digest);
  CHECK(loaded.frames() == 5);
  CHECK(loaded.cameras.size() == scene.cameras.size());
  CHECK(loaded.gt[2].labels == scene.gt[2].labels);

  // Flipping one voxel changes the digest.
  loaded.gt[0].labels[0] = loaded.gt[0].labels[0] == 3 ? 4 : 3;
  CHECK(scene_hash(loaded) != digest);
}

TEST_CASE("recipe JSON round trip and validation") {
  SceneRecipe recipe = default_recipe();
  std::string text = recipe_to_json_string(recipe);
  test::TempDir dir("recipe");
  {
    std::ofstream os(dir.str("r.json"));
    os << text;
  }
  SceneRecipe parsed = parse_recipe_file(dir.str("r.json"));
  CHECK(parsed.grid == recipe.grid);
  CHECK(parsed.frames == recipe.frames);
  CHECK(parsed.statics.size() == recipe.statics.size());
  CHECK(parsed.movers.size() == recipe.movers.size());
  CHECK(parsed.movers[0].pulse.amplitude == doctest::Approx(0.2));

  {
    std::ofstream os(dir.str("bad.json"));
    os << R"({"frames": 17, "unknown_key": 1})";
  }
  try {
    parse_recipe_file(dir.str("bad.json"));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownKey);
    CHECK(std::string(e.what()).find("unknown_key") != std::string::npos);
  }
}

TEST_CASE("even frame counts and non-instance movers are rejected") {
  SceneRecipe recipe = default_recipe();
  recipe.frames = 4;
  CHECK_THROWS_AS(generate_scene(recipe), Error);

  recipe = default_recipe();
  recipe.movers[0].class_id = 12;  // terrain cannot move
  CHECK_THROWS_AS(generate_scene(recipe), Error);
}

TEST_CASE("object speed map attributes motion to the mover") {
  SceneRecipe recipe = default_recipe();
  recipe.rig.width = 32;
  recipe.rig.height = 24;
  SyntheticScene scene = generate_scene(recipe);
  const double speed = recipe.movers[0].mean_speed(scene.frames());
  CHECK(speed == doctest::Approx(recipe.movers[0].trajectory.velocity.norm()).epsilon(1e-9));

  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    std::vector<double> flow = object_speed_map(scene, static_cast<int>(v));
    const auto& seg = scene.seg[scene.frame_of_offset(0)][v];
    for (size_t px = 0; px < flow.size(); ++px) {
      if (seg[px] == 2) {
        CHECK(flow[px] == doctest::Approx(speed).epsilon(1e-9));
      } else if (seg[px] != kIgnoreLabel) {
        CHECK(flow[px] == 0.0);
      }
    }
  }
}
