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
#include "dego/synthsuite.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dego/rendering.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dego {

namespace fs = std::filesystem;
using nlohmann::json;

bool ShapeSpec::contains(const Vec3& p, const Vec3& center_t, double pulse) const {
  Vec3 he = half_extents * pulse;
  Vec3 d = p - center_t;
  if (kind == Kind::Box)
    return std::abs(d[0]) <= he[0] && std::abs(d[1]) <= he[1] && std::abs(d[2]) <= he[2];
  double r = he[0];
  return d[0] * d[0] + d[1] * d[1] <= r * r && std::abs(d[2]) <= he[2];
}

void ShapeSpec::aabb(const Vec3& center_t, double pulse, Vec3& lo, Vec3& hi) const {
  Vec3 he = half_extents * pulse;
  if (kind == Kind::Cylinder) he[1] = he[0];  // radius bounds x and y
  lo = center_t - he;
  hi = center_t + he;
}

Vec3 TrajectorySpec::displacement(double t) const {
  switch (kind) {
    case Kind::None: return Vec3::Zero();
    case Kind::Linear: return velocity * t;
    case Kind::Sinusoidal: return amplitude * std::sin(2.0 * M_PI * t / period);
  }
  return Vec3::Zero();
}

double PulseSpec::factor(double t) const {
  if (amplitude == 0.0) return 1.0;
  return 1.0 + amplitude * std::sin(2.0 * M_PI * t / period + phase);
}

double SceneObject::mean_speed(int frames) const {
  if (frames < 2 || trajectory.kind == TrajectorySpec::Kind::None) return 0.0;
  const int t_max = (frames - 1) / 2;
  double total = 0.0;
  for (int t = -t_max; t < t_max; ++t)
    total += (center_at(t + 1) - center_at(t)).norm();
  return total / (frames - 1);
}

SceneRecipe default_recipe() {
  SceneRecipe recipe;
  recipe.grid = make_grid_spec(Vec3(-8, -8, 0), Vec3(8, 8, 4), 0.5);
  recipe.frames = 17;

  const ClassTaxonomy& tax = ClassTaxonomy::standard();
  SceneObject ground;
  ground.class_id = tax.index_of("driveable_surface");
  ground.shape = {ShapeSpec::Kind::Box, Vec3(0, 0, 0.25), Vec3(7.5, 7.5, 0.25)};
  recipe.statics.push_back(ground);

  SceneObject wall;
  wall.class_id = tax.index_of("manmade");
  wall.shape = {ShapeSpec::Kind::Box, Vec3(-5.0, 3.0, 1.5), Vec3(0.5, 3.0, 1.0)};
  recipe.statics.push_back(wall);

  SceneObject parked;
  parked.class_id = tax.index_of("car");
  parked.shape = {ShapeSpec::Kind::Box, Vec3(4.0, -3.5, 1.0), Vec3(2.0, 1.0, 0.75)};
  recipe.statics.push_back(parked);

  SceneObject walker;
  walker.class_id = tax.index_of("pedestrian");
  walker.shape = {ShapeSpec::Kind::Cylinder, Vec3(0.0, -1.0, 1.25), Vec3(0.8, 0.8, 1.0)};
  walker.trajectory.kind = TrajectorySpec::Kind::Linear;
  walker.trajectory.velocity = Vec3(0.35, 0.25, 0.0);
  walker.pulse = {0.2, 8.0, 0.0};
  recipe.movers.push_back(walker);
  return recipe;
}

std::vector<CameraModel> build_rig(const CameraRigSpec& rig, const VoxelGridSpec& grid) {
  require(rig.count >= 1, ErrorKind::SpecMismatch, "camera rig needs at least one camera");
  require(rig.width > 0 && rig.height > 0, ErrorKind::SpecMismatch, "camera size must be positive");
  const Vec3 center = 0.5 * (grid.min_corner + grid.max_corner);
  const Vec3 half = 0.5 * (grid.max_corner - grid.min_corner);
  const double radius = rig.radius_fraction * std::min(half[0], half[1]) * 2.0;
  const double cam_z = grid.min_corner[2] + rig.height_fraction * (grid.max_corner[2] - grid.min_corner[2]);

  double f = 0.5 * rig.width / std::tan(0.5 * rig.fov_deg * M_PI / 180.0);
  Mat3 K = Mat3::Identity();
  K(0, 0) = f;
  K(1, 1) = f;
  K(0, 2) = 0.5 * rig.width;
  K(1, 2) = 0.5 * rig.height;

  std::vector<CameraModel> cameras;
  for (int v = 0; v < rig.count; ++v) {
    double angle = 2.0 * M_PI * v / rig.count + M_PI / 4.0;
    Vec3 pos = center + Vec3(radius * std::cos(angle), radius * std::sin(angle), 0.0);
    pos[2] = cam_z;
    Vec3 target = center;
    target[2] = grid.min_corner[2] + 0.3 * (grid.max_corner[2] - grid.min_corner[2]);
    Vec3 forward = (target - pos).normalized();
    Vec3 right = forward.cross(Vec3(0, 0, 1)).normalized();
    Vec3 down = forward.cross(right);  // = z_c x x_c for the y-down convention
    Mat3 R;
    R.row(0) = right;
    R.row(1) = down;
    R.row(2) = forward;
    CameraModel cam;
    cam.K = K;
    cam.E = Mat4::Identity();
    cam.E.topLeftCorner<3, 3>() = R;
    cam.E.topRightCorner<3, 1>() = -R * pos;
    cam.width = rig.width;
    cam.height = rig.height;
    cam.validate();
    cameras.push_back(cam);
  }
  return cameras;
}

namespace {

void rasterize_object(SemanticLabelGrid& grid, const SceneObject& obj, double t,
                      const std::string& what) {
  const VoxelGridSpec& spec = grid.spec;
  const Vec3 center_t = obj.center_at(t);
  const double pulse = obj.pulse.factor(t);
  Vec3 lo, hi;
  obj.shape.aabb(center_t, pulse, lo, hi);
  for (int a = 0; a < 3; ++a)
    require(lo[a] >= spec.min_corner[a] - 1e-9 && hi[a] <= spec.max_corner[a] + 1e-9,
            ErrorKind::OutOfGrid, what + " leaves the grid at offset " + std::to_string(t));
  Eigen::Vector3i ilo, ihi;
  for (int a = 0; a < 3; ++a) {
    ilo[a] = std::max(0, static_cast<int>(std::floor((lo[a] - spec.min_corner[a]) / spec.voxel_size - 0.5)));
    ihi[a] = std::min(spec.dims[a] - 1,
                      static_cast<int>(std::ceil((hi[a] - spec.min_corner[a]) / spec.voxel_size + 0.5)));
  }
  for (int ix = ilo[0]; ix <= ihi[0]; ++ix)
    for (int iy = ilo[1]; iy <= ihi[1]; ++iy)
      for (int iz = ilo[2]; iz <= ihi[2]; ++iz)
        if (obj.shape.contains(spec.voxel_center(ix, iy, iz), center_t, pulse))
          grid.at(ix, iy, iz) = static_cast<uint8_t>(obj.class_id);
}

}  // namespace

std::pair<std::vector<float>, std::vector<uint8_t>> pseudo_labels(const SemanticLabelGrid& frame,
                                                                  const CameraModel& camera) {
  const int64_t npx = static_cast<int64_t>(camera.width) * camera.height;
  std::vector<float> depth(static_cast<size_t>(npx), 0.0f);
  std::vector<uint8_t> seg(static_cast<size_t>(npx), kIgnoreLabel);
  std::vector<Ray> rays = camera_rays(camera);
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (int64_t px = 0; px < npx; ++px) {
    VoxelHit hit = first_occupied_voxel(frame, rays[px].origin, rays[px].dir);
    if (!hit.hit) continue;
    depth[px] = static_cast<float>(std::max(hit.t_enter, 1e-9));
    seg[px] = hit.label;
  }
  return {std::move(depth), std::move(seg)};
}

SyntheticScene generate_scene(const SceneRecipe& recipe) {
  require(recipe.frames >= 1 && recipe.frames % 2 == 1, ErrorKind::SpecMismatch,
          "frame count must be odd so offsets span -T..T");
  for (const SceneObject& obj : recipe.movers)
    require(ClassTaxonomy::is_instance(obj.class_id), ErrorKind::SpecMismatch,
            "mover class must be a HUMAN or vehicle class");

  SyntheticScene scene;
  scene.recipe = recipe;
  scene.cameras = build_rig(recipe.rig, recipe.grid);

  const int t_max = scene.max_offset();
  scene.gt.reserve(recipe.frames);
  for (int k = 0; k < recipe.frames; ++k) {
    const double t = k - t_max;
    SemanticLabelGrid grid(recipe.grid);
    for (size_t i = 0; i < recipe.statics.size(); ++i)
      rasterize_object(grid, recipe.statics[i], t, "static object " + std::to_string(i));
    for (size_t i = 0; i < recipe.movers.size(); ++i)
      rasterize_object(grid, recipe.movers[i], t, "mover " + std::to_string(i));
    scene.gt.push_back(std::move(grid));
  }

  std::mt19937_64 noise_rng(recipe.seed);
  scene.depth.resize(recipe.frames);
  scene.seg.resize(recipe.frames);
  for (int k = 0; k < recipe.frames; ++k) {
    scene.depth[k].resize(scene.cameras.size());
    scene.seg[k].resize(scene.cameras.size());
    for (size_t v = 0; v < scene.cameras.size(); ++v) {
      auto [d, s] = pseudo_labels(scene.gt[k], scene.cameras[v]);
      if (recipe.label_flip_rate > 0.0 || recipe.depth_jitter > 0.0) {
        for (size_t px = 0; px < s.size(); ++px) {
          if (s[px] == kIgnoreLabel) continue;
          if (recipe.label_flip_rate > 0.0 && uniform01(noise_rng) < recipe.label_flip_rate)
            s[px] = static_cast<uint8_t>(noise_rng() % kNumClasses);
          if (recipe.depth_jitter > 0.0)
            d[px] = std::max(1e-9, d[px] + recipe.depth_jitter * normal01(noise_rng));
        }
      }
      scene.depth[k][v] = std::move(d);
      scene.seg[k][v] = std::move(s);
    }
  }
  return scene;
}

std::string scene_hash(const SyntheticScene& scene) {
  uint64_t h = kFnvOffset;
  auto mix_f64 = [&h](double v) { h = fnv1a64(&v, sizeof(v), h); };
  auto mix_u32 = [&h](uint32_t v) { h = fnv1a64(&v, sizeof(v), h); };
  for (int a = 0; a < 3; ++a) mix_f64(scene.grid().min_corner[a]);
  for (int a = 0; a < 3; ++a) mix_f64(scene.grid().max_corner[a]);
  mix_f64(scene.grid().voxel_size);
  mix_u32(static_cast<uint32_t>(scene.frames()));
  mix_u32(static_cast<uint32_t>(scene.cameras.size()));
  for (const CameraModel& cam : scene.cameras) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) mix_f64(cam.K(r, c));
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mix_f64(cam.E(r, c));
    mix_u32(static_cast<uint32_t>(cam.width));
    mix_u32(static_cast<uint32_t>(cam.height));
  }
  for (const SemanticLabelGrid& g : scene.gt) h = fnv1a64(g.labels.data(), g.labels.size(), h);
  for (const auto& frame : scene.depth)
    for (const auto& map : frame) h = fnv1a64(map.data(), map.size() * sizeof(float), h);
  for (const auto& frame : scene.seg)
    for (const auto& map : frame) h = fnv1a64(map.data(), map.size(), h);
  return hex64(h);
}

std::vector<double> object_speed_map(const SyntheticScene& scene, int camera_index) {
  require(camera_index >= 0 && camera_index < static_cast<int>(scene.cameras.size()),
          ErrorKind::IndexOutOfRange, "camera index out of range");
  const int ref = scene.frame_of_offset(0);
  const SemanticLabelGrid& grid = scene.gt[ref];
  const CameraModel& camera = scene.cameras[camera_index];
  std::vector<Ray> rays = camera_rays(camera);
  std::vector<double> speed(rays.size(), 0.0);

  std::vector<double> mover_speed(scene.recipe.movers.size());
  for (size_t i = 0; i < scene.recipe.movers.size(); ++i)
    mover_speed[i] = scene.recipe.movers[i].mean_speed(scene.frames());

  for (size_t px = 0; px < rays.size(); ++px) {
    VoxelHit hit = first_occupied_voxel(grid, rays[px].origin, rays[px].dir);
    if (!hit.hit) continue;
    Vec3 center = grid.spec.voxel_center(hit.idx[0], hit.idx[1], hit.idx[2]);
    // Movers overwrite statics, so check them last-to-first.
    for (int i = static_cast<int>(scene.recipe.movers.size()) - 1; i >= 0; --i) {
      const SceneObject& obj = scene.recipe.movers[i];
      if (obj.shape.contains(center, obj.center_at(0), obj.pulse.factor(0))) {
        speed[px] = mover_speed[i];
        break;
      }
    }
  }
  return speed;
}

// ---- JSON (de)serialization --------------------------------------------------

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec3_from_json(const json& j, const std::string& key) {
  require(j.is_array() && j.size() == 3, ErrorKind::TypeError, key + " must be a 3-array");
  for (const auto& e : j) require(e.is_number(), ErrorKind::TypeError, key + " must be numeric");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::TypeError, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    require(ok, ErrorKind::UnknownKey, where + "." + it.key());
  }
}

json object_to_json(const SceneObject& obj) {
  const ClassTaxonomy& tax = ClassTaxonomy::standard();
  json j;
  j["class"] = tax.names[obj.class_id];
  json shape;
  shape["kind"] = obj.shape.kind == ShapeSpec::Kind::Box ? "box" : "cylinder";
  shape["center"] = vec3_to_json(obj.shape.center);
  if (obj.shape.kind == ShapeSpec::Kind::Box) {
    shape["half_extents"] = vec3_to_json(obj.shape.half_extents);
  } else {
    shape["radius"] = obj.shape.half_extents[0];
    shape["half_height"] = obj.shape.half_extents[2];
  }
  j["shape"] = shape;
  if (obj.trajectory.kind != TrajectorySpec::Kind::None) {
    json t;
    if (obj.trajectory.kind == TrajectorySpec::Kind::Linear) {
      t["kind"] = "linear";
      t["velocity"] = vec3_to_json(obj.trajectory.velocity);
    } else {
      t["kind"] = "sinusoidal";
      t["amplitude"] = vec3_to_json(obj.trajectory.amplitude);
      t["period"] = obj.trajectory.period;
    }
    j["trajectory"] = t;
  }
  if (obj.pulse.amplitude != 0.0) {
    j["pulse"] = {{"amplitude", obj.pulse.amplitude},
                  {"period", obj.pulse.period},
                  {"phase", obj.pulse.phase}};
  }
  return j;
}

SceneObject object_from_json(const json& j, const std::string& where) {
  check_keys(j, {"class", "shape", "trajectory", "pulse"}, where);
  require(j.contains("class") && j["class"].is_string(), ErrorKind::TypeError,
          where + ".class must be a string");
  SceneObject obj;
  obj.class_id = ClassTaxonomy::standard().index_of(j["class"].get<std::string>());
  require(j.contains("shape"), ErrorKind::TypeError, where + ".shape is required");
  const json& shape = j["shape"];
  check_keys(shape, {"kind", "center", "half_extents", "radius", "half_height"}, where + ".shape");
  std::string kind = shape.value("kind", "box");
  obj.shape.center = vec3_from_json(shape.at("center"), where + ".shape.center");
  if (kind == "box") {
    obj.shape.kind = ShapeSpec::Kind::Box;
    obj.shape.half_extents = vec3_from_json(shape.at("half_extents"), where + ".shape.half_extents");
  } else if (kind == "cylinder") {
    obj.shape.kind = ShapeSpec::Kind::Cylinder;
    require(shape.contains("radius") && shape.contains("half_height"), ErrorKind::TypeError,
            where + ".shape needs radius and half_height");
    double r = shape["radius"].get<double>();
    double hh = shape["half_height"].get<double>();
    obj.shape.half_extents = Vec3(r, r, hh);
  } else {
    raise(ErrorKind::TypeError, where + ".shape.kind must be box or cylinder");
  }
  if (j.contains("trajectory")) {
    const json& t = j["trajectory"];
    check_keys(t, {"kind", "velocity", "amplitude", "period"}, where + ".trajectory");
    std::string tk = t.value("kind", "linear");
    if (tk == "linear") {
      obj.trajectory.kind = TrajectorySpec::Kind::Linear;
      obj.trajectory.velocity = vec3_from_json(t.at("velocity"), where + ".trajectory.velocity");
    } else if (tk == "sinusoidal") {
      obj.trajectory.kind = TrajectorySpec::Kind::Sinusoidal;
      obj.trajectory.amplitude = vec3_from_json(t.at("amplitude"), where + ".trajectory.amplitude");
      obj.trajectory.period = t.value("period", 8.0);
      require(obj.trajectory.period > 0.0, ErrorKind::TypeError, where + ".trajectory.period");
    } else {
      raise(ErrorKind::TypeError, where + ".trajectory.kind must be linear or sinusoidal");
    }
  }
  if (j.contains("pulse")) {
    const json& p = j["pulse"];
    check_keys(p, {"amplitude", "period", "phase"}, where + ".pulse");
    obj.pulse.amplitude = p.value("amplitude", 0.2);
    obj.pulse.period = p.value("period", 8.0);
    obj.pulse.phase = p.value("phase", 0.0);
    require(obj.pulse.period > 0.0, ErrorKind::TypeError, where + ".pulse.period");
  } else if (ClassTaxonomy::is_human(obj.class_id) &&
             obj.trajectory.kind != TrajectorySpec::Kind::None) {
    obj.pulse = {0.2, 8.0, 0.0};  // human movers default to the nonrigid pulse
  }
  return obj;
}

json recipe_to_json(const SceneRecipe& recipe) {
  json j;
  j["seed"] = recipe.seed;
  j["grid"] = {{"min", vec3_to_json(recipe.grid.min_corner)},
               {"max", vec3_to_json(recipe.grid.max_corner)},
               {"voxel_size", recipe.grid.voxel_size}};
  j["frames"] = recipe.frames;
  j["static"] = json::array();
  for (const auto& o : recipe.statics) j["static"].push_back(object_to_json(o));
  j["movers"] = json::array();
  for (const auto& o : recipe.movers) j["movers"].push_back(object_to_json(o));
  j["rig"] = {{"count", recipe.rig.count},     {"width", recipe.rig.width},
              {"height", recipe.rig.height},   {"fov_deg", recipe.rig.fov_deg},
              {"radius_fraction", recipe.rig.radius_fraction},
              {"height_fraction", recipe.rig.height_fraction}};
  if (recipe.label_flip_rate != 0.0) j["label_flip_rate"] = recipe.label_flip_rate;
  if (recipe.depth_jitter != 0.0) j["depth_jitter"] = recipe.depth_jitter;
  return j;
}

SceneRecipe recipe_from_json(const json& j) {
  check_keys(j, {"seed", "grid", "frames", "static", "movers", "rig", "label_flip_rate",
                 "depth_jitter"},
             "recipe");
  SceneRecipe recipe = default_recipe();
  recipe.statics.clear();
  recipe.movers.clear();
  if (j.contains("seed")) recipe.seed = j["seed"].get<uint64_t>();
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, {"min", "max", "voxel_size"}, "recipe.grid");
    recipe.grid = make_grid_spec(vec3_from_json(g.at("min"), "recipe.grid.min"),
                                 vec3_from_json(g.at("max"), "recipe.grid.max"),
                                 g.at("voxel_size").get<double>());
  }
  if (j.contains("frames")) recipe.frames = j["frames"].get<int>();
  if (j.contains("static"))
    for (size_t i = 0; i < j["static"].size(); ++i)
      recipe.statics.push_back(object_from_json(j["static"][i], "static[" + std::to_string(i) + "]"));
  if (j.contains("movers"))
    for (size_t i = 0; i < j["movers"].size(); ++i)
      recipe.movers.push_back(object_from_json(j["movers"][i], "movers[" + std::to_string(i) + "]"));
  if (j.contains("rig")) {
    const json& r = j["rig"];
    check_keys(r, {"count", "width", "height", "fov_deg", "radius_fraction", "height_fraction"},
               "recipe.rig");
    recipe.rig.count = r.value("count", recipe.rig.count);
    recipe.rig.width = r.value("width", recipe.rig.width);
    recipe.rig.height = r.value("height", recipe.rig.height);
    recipe.rig.fov_deg = r.value("fov_deg", recipe.rig.fov_deg);
    recipe.rig.radius_fraction = r.value("radius_fraction", recipe.rig.radius_fraction);
    recipe.rig.height_fraction = r.value("height_fraction", recipe.rig.height_fraction);
  }
  recipe.label_flip_rate = j.value("label_flip_rate", 0.0);
  recipe.depth_jitter = j.value("depth_jitter", 0.0);
  return recipe;
}

json camera_to_json(const CameraModel& cam) {
  json j;
  json k = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) k.push_back(cam.K(r, c));
  json e = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) e.push_back(cam.E(r, c));
  j["K"] = k;
  j["E"] = e;
  j["width"] = cam.width;
  j["height"] = cam.height;
  return j;
}

CameraModel camera_from_json(const json& j) {
  CameraModel cam;
  const json& k = j.at("K");
  const json& e = j.at("E");
  require(k.size() == 9 && e.size() == 16, ErrorKind::TypeError, "camera K/E sizes");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.K(r, c) = k[r * 3 + c].get<double>();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.E(r, c) = e[r * 4 + c].get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.validate();
  return cam;
}

}  // namespace

SceneRecipe parse_recipe_file(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::MissingFile, path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    raise(ErrorKind::TypeError, "invalid JSON in " + path + ": " + e.what());
  }
  return recipe_from_json(j);
}

std::string recipe_to_json_string(const SceneRecipe& recipe) { return recipe_to_json(recipe).dump(2); }

void save_scene(const SyntheticScene& scene, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "gt", ec);
  fs::create_directories(fs::path(dir) / "labels", ec);
  require(!ec, ErrorKind::IoError, "cannot create scene directory: " + dir);

  for (int k = 0; k < scene.frames(); ++k)
    save_label_grid((fs::path(dir) / "gt" / ("frame_" + std::to_string(k) + ".vox")).string(),
                    scene.gt[k]);
  const int w = scene.cameras.empty() ? 0 : scene.cameras[0].width;
  const int h = scene.cameras.empty() ? 0 : scene.cameras[0].height;
  for (int k = 0; k < scene.frames(); ++k)
    for (size_t v = 0; v < scene.cameras.size(); ++v) {
      std::string stem = "frame_" + std::to_string(k) + "_cam_" + std::to_string(v);
      save_image((fs::path(dir) / "labels" / (stem + ".depth.img")).string(), h, w, 1,
                 scene.depth[k][v]);
      std::vector<float> seg_f(scene.seg[k][v].size());
      for (size_t i = 0; i < seg_f.size(); ++i) seg_f[i] = scene.seg[k][v][i];
      save_image((fs::path(dir) / "labels" / (stem + ".seg.img")).string(), h, w, 1, seg_f);
    }

  json j;
  j["format"] = "dego-scene-v1";
  j["recipe"] = recipe_to_json(scene.recipe);
  j["cameras"] = json::array();
  for (const CameraModel& cam : scene.cameras) j["cameras"].push_back(camera_to_json(cam));
  j["digest"] = scene_hash(scene);
  std::ofstream os(fs::path(dir) / "scene.json");
  require(os.good(), ErrorKind::IoError, "cannot write scene.json in " + dir);
  os << j.dump(2) << "\n";
  require(os.good(), ErrorKind::IoError, "write failed: scene.json");
}

SyntheticScene load_scene(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "scene.json");
  require(is.good(), ErrorKind::MissingFile, dir + "/scene.json");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    raise(ErrorKind::TypeError, std::string("invalid scene.json: ") + e.what());
  }
  require(j.value("format", "") == "dego-scene-v1", ErrorKind::BadMagic,
          "unrecognized scene format");

  SyntheticScene scene;
  scene.recipe = recipe_from_json(j.at("recipe"));
  for (const auto& cj : j.at("cameras")) scene.cameras.push_back(camera_from_json(cj));

  scene.gt.reserve(scene.frames());
  for (int k = 0; k < scene.frames(); ++k) {
    std::string path = (fs::path(dir) / "gt" / ("frame_" + std::to_string(k) + ".vox")).string();
    require(fs::exists(path), ErrorKind::MissingGroundTruth, path);
    scene.gt.push_back(load_label_grid(path, scene.recipe.grid));
  }
  scene.depth.resize(scene.frames());
  scene.seg.resize(scene.frames());
  for (int k = 0; k < scene.frames(); ++k) {
    scene.depth[k].resize(scene.cameras.size());
    scene.seg[k].resize(scene.cameras.size());
    for (size_t v = 0; v < scene.cameras.size(); ++v) {
      std::string stem = "frame_" + std::to_string(k) + "_cam_" + std::to_string(v);
      std::string dpath = (fs::path(dir) / "labels" / (stem + ".depth.img")).string();
      std::string spath = (fs::path(dir) / "labels" / (stem + ".seg.img")).string();
      require(fs::exists(dpath) && fs::exists(spath), ErrorKind::MissingGroundTruth,
              "missing label maps for " + stem);
      ImageFile dimg = load_image(dpath);
      ImageFile simg = load_image(spath);
      const CameraModel& cam = scene.cameras[v];
      require(dimg.height == cam.height && dimg.width == cam.width && dimg.payload_dim == 1 &&
                  simg.height == cam.height && simg.width == cam.width && simg.payload_dim == 1,
              ErrorKind::SpecMismatch, "label map size mismatch for " + stem);
      scene.depth[k][v] = std::move(dimg.data);
      scene.seg[k][v].resize(simg.data.size());
      for (size_t i = 0; i < simg.data.size(); ++i)
        scene.seg[k][v][i] = static_cast<uint8_t>(simg.data[i]);
    }
  }

  std::string stored = j.value("digest", "");
  std::string actual = scene_hash(scene);
  require(stored.empty() || stored == actual, ErrorKind::DigestMismatch,
          "scene digest mismatch: stored " + stored + ", actual " + actual);
  return scene;
}

}  // namespace dego
