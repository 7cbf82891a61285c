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
#include "dego/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace dego {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), ErrorKind::TypeError, path_ + " must be an object");
  }

  ~Section() = default;

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(consumed_.count(it.key()) != 0, ErrorKind::UnknownKey, path_ + it.key());
  }

  bool has(const std::string& key) {
    consumed_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    consumed_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    require(j_[key].is_number(), ErrorKind::TypeError, path_ + key + " must be a number");
    return j_[key].get<double>();
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    require(j_[key].is_number_integer(), ErrorKind::TypeError, path_ + key + " must be an integer");
    return j_[key].get<int>();
  }

  uint64_t unsigned_integer(const std::string& key, uint64_t fallback) {
    if (!has(key)) return fallback;
    require(j_[key].is_number_unsigned() || j_[key].is_number_integer(), ErrorKind::TypeError,
            path_ + key + " must be an unsigned integer");
    return j_[key].get<uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    require(j_[key].is_boolean(), ErrorKind::TypeError, path_ + key + " must be a boolean");
    return j_[key].get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    require(j_[key].is_string(), ErrorKind::TypeError, path_ + key + " must be a string");
    return j_[key].get<std::string>();
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

Vec3 vec3_at(const json& j, const std::string& where) {
  require(j.is_array() && j.size() == 3, ErrorKind::TypeError, where + " must be a 3-array");
  for (const auto& e : j) require(e.is_number(), ErrorKind::TypeError, where + " must be numeric");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

Config parse_config_json(const std::string& json_text) {
  json root_json;
  try {
    root_json = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(ErrorKind::TypeError, std::string("invalid JSON: ") + e.what());
  }

  Config cfg;
  cfg.grid = paper_grid_spec();
  Section root(root_json, "");

  cfg.seed = root.unsigned_integer("seed", cfg.seed);
  cfg.threads = root.integer("threads", cfg.threads);
  cfg.out_dir = root.text("out", cfg.out_dir);

  if (root.has("grid")) {
    Section s(root.at("grid"), "grid.");
    Vec3 mn = vec3_at(s.at("min"), "grid.min");
    Vec3 mx = vec3_at(s.at("max"), "grid.max");
    double vs = s.number("voxel_size", 0.4);
    s.finish();
    cfg.grid = make_grid_spec(mn, mx, vs);
    cfg.has_grid = true;
  }
  if (root.has("encoding")) {
    Section s(root.at("encoding"), "encoding.");
    cfg.encoding.position_levels = s.integer("position_levels", cfg.encoding.position_levels);
    cfg.encoding.time_levels = s.integer("time_levels", cfg.encoding.time_levels);
    cfg.encoding.time_embed_dim = s.integer("time_embed_dim", cfg.encoding.time_embed_dim);
    s.finish();
    cfg.encoding.validate();
  }
  if (root.has("gaussians")) {
    Section s(root.at("gaussians"), "gaussians.");
    cfg.gaussians.count = s.integer("count", cfg.gaussians.count);
    cfg.gaussians.feature_dim = s.integer("feature_dim", cfg.gaussians.feature_dim);
    cfg.gaussians.scale_multiplier = s.number("scale_multiplier", cfg.gaussians.scale_multiplier);
    cfg.gaussians.opacity = s.number("init_opacity", cfg.gaussians.opacity);
    cfg.gaussians.feature_range = s.number("init_feature_range", cfg.gaussians.feature_range);
    s.finish();
    require(cfg.gaussians.opacity > 0.0 && cfg.gaussians.opacity < 1.0, ErrorKind::TypeError,
            "gaussians.init_opacity must lie in (0,1)");
  }
  if (root.has("deformation")) {
    Section s(root.at("deformation"), "deformation.");
    cfg.deformation.enabled = s.boolean("enabled", cfg.deformation.enabled);
    cfg.deformation.hidden_dim = s.integer("hidden_dim", cfg.deformation.hidden_dim);
    cfg.deformation.depth = s.integer("depth", cfg.deformation.depth);
    if (s.has("heads")) {
      Section h(s.at("heads"), "deformation.heads.");
      cfg.deformation.heads.rotation = h.boolean("rotation", true);
      cfg.deformation.heads.scale = h.boolean("scale", true);
      cfg.deformation.heads.opacity = h.boolean("opacity", true);
      cfg.deformation.heads.mask = h.boolean("mask", true);
      h.finish();
    }
    s.finish();
  }
  if (root.has("splat")) {
    Section s(root.at("splat"), "splat.");
    cfg.splat.truncation_sigma = s.number("truncation_sigma", cfg.splat.truncation_sigma);
    cfg.splat.weight_epsilon = s.number("weight_epsilon", cfg.splat.weight_epsilon);
    cfg.splat.occupancy_threshold = s.number("occupancy_threshold", cfg.splat.occupancy_threshold);
    s.finish();
    cfg.splat.validate();
  }
  if (root.has("loss")) {
    Section s(root.at("loss"), "loss.");
    cfg.loss.seg = s.number("seg", cfg.loss.seg);
    cfg.loss.dep = s.number("depth", cfg.loss.dep);
    cfg.loss.distill = s.number("distill", cfg.loss.distill);
    cfg.loss.def = s.number("def", cfg.loss.def);
    s.finish();
    require(cfg.loss.seg >= 0 && cfg.loss.dep >= 0 && cfg.loss.distill >= 0 && cfg.loss.def >= 0,
            ErrorKind::TypeError, "loss weights must be nonnegative");
  }
  if (root.has("deformation_loss")) {
    Section s(root.at("deformation_loss"), "deformation_loss.");
    cfg.def_loss.mu = s.number("mu", cfg.def_loss.mu);
    cfg.def_loss.rot = s.number("rot", cfg.def_loss.rot);
    cfg.def_loss.scale = s.number("scale", cfg.def_loss.scale);
    cfg.def_loss.opacity = s.number("opacity", cfg.def_loss.opacity);
    cfg.def_loss.reg = s.number("reg", cfg.def_loss.reg);
    cfg.def_loss.mask = s.number("mask", cfg.def_loss.mask);
    s.finish();
  }
  if (root.has("optimizer")) {
    Section s(root.at("optimizer"), "optimizer.");
    cfg.optimizer.base_lr = s.number("base_lr", cfg.optimizer.base_lr);
    cfg.optimizer.weight_decay = s.number("weight_decay", cfg.optimizer.weight_decay);
    cfg.optimizer.beta1 = s.number("beta1", cfg.optimizer.beta1);
    cfg.optimizer.beta2 = s.number("beta2", cfg.optimizer.beta2);
    cfg.optimizer.eps = s.number("eps", cfg.optimizer.eps);
    cfg.optimizer.warmup_iters = s.integer("warmup_iters", cfg.optimizer.warmup_iters);
    cfg.optimizer.warmup_ratio = s.number("warmup_ratio", cfg.optimizer.warmup_ratio);
    cfg.optimizer.max_steps = s.integer("max_steps", 0);
    cfg.optimizer.min_lr_ratio = s.number("min_lr_ratio", cfg.optimizer.min_lr_ratio);
    cfg.optimizer.grad_clip_norm = s.number("grad_clip_norm", cfg.optimizer.grad_clip_norm);
    s.finish();
  }
  if (root.has("distill")) {
    Section s(root.at("distill"), "distill.");
    cfg.distill.aligned_dim = s.integer("aligned_dim", cfg.distill.aligned_dim);
    cfg.distill.teacher_dim = s.integer("teacher_dim", cfg.distill.teacher_dim);
    cfg.distill.patch_size = s.integer("patch_size", cfg.distill.patch_size);
    cfg.distill.teacher_block = s.integer("teacher_block", cfg.distill.teacher_block);
    cfg.distill.mode = s.text("mode", cfg.distill.mode);
    cfg.distill.teacher_path = s.text("teacher_path", cfg.distill.teacher_path);
    s.finish();
    require(cfg.distill.mode == "synthetic" || cfg.distill.mode == "file", ErrorKind::TypeError,
            "distill.mode must be synthetic or file");
  }
  if (root.has("train")) {
    Section s(root.at("train"), "train.");
    cfg.train.steps = s.integer("steps", cfg.train.steps);
    if (s.has("frame_offsets")) {
      const json& arr = s.at("frame_offsets");
      require(arr.is_array() && !arr.empty(), ErrorKind::TypeError,
              "train.frame_offsets must be a nonempty array");
      cfg.train.frame_offsets.clear();
      for (const auto& e : arr) {
        require(e.is_number_integer(), ErrorKind::TypeError,
                "train.frame_offsets entries must be integers");
        cfg.train.frame_offsets.push_back(e.get<int>());
      }
    }
    cfg.train.scene_path = s.text("scene", cfg.train.scene_path);
    cfg.train.eval_every = s.integer("eval_every", cfg.train.eval_every);
    cfg.train.log_every = s.integer("log_every", cfg.train.log_every);
    s.finish();
  }
  root.finish();

  if (cfg.optimizer.max_steps <= 0) cfg.optimizer.max_steps = cfg.train.steps;
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::MissingFile, path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

std::string config_to_json(const Config& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["out"] = cfg.out_dir;
  j["grid"] = {{"min", {cfg.grid.min_corner[0], cfg.grid.min_corner[1], cfg.grid.min_corner[2]}},
               {"max", {cfg.grid.max_corner[0], cfg.grid.max_corner[1], cfg.grid.max_corner[2]}},
               {"voxel_size", cfg.grid.voxel_size}};
  j["encoding"] = {{"position_levels", cfg.encoding.position_levels},
                   {"time_levels", cfg.encoding.time_levels},
                   {"time_embed_dim", cfg.encoding.time_embed_dim}};
  j["gaussians"] = {{"count", cfg.gaussians.count},
                    {"feature_dim", cfg.gaussians.feature_dim},
                    {"scale_multiplier", cfg.gaussians.scale_multiplier},
                    {"init_opacity", cfg.gaussians.opacity},
                    {"init_feature_range", cfg.gaussians.feature_range}};
  j["deformation"] = {{"enabled", cfg.deformation.enabled},
                      {"hidden_dim", cfg.deformation.hidden_dim},
                      {"depth", cfg.deformation.depth},
                      {"heads",
                       {{"rotation", cfg.deformation.heads.rotation},
                        {"scale", cfg.deformation.heads.scale},
                        {"opacity", cfg.deformation.heads.opacity},
                        {"mask", cfg.deformation.heads.mask}}}};
  j["splat"] = {{"truncation_sigma", cfg.splat.truncation_sigma},
                {"weight_epsilon", cfg.splat.weight_epsilon},
                {"occupancy_threshold", cfg.splat.occupancy_threshold}};
  j["loss"] = {{"seg", cfg.loss.seg},
               {"depth", cfg.loss.dep},
               {"distill", cfg.loss.distill},
               {"def", cfg.loss.def}};
  j["deformation_loss"] = {{"mu", cfg.def_loss.mu},     {"rot", cfg.def_loss.rot},
                           {"scale", cfg.def_loss.scale}, {"opacity", cfg.def_loss.opacity},
                           {"reg", cfg.def_loss.reg},    {"mask", cfg.def_loss.mask}};
  j["optimizer"] = {{"base_lr", cfg.optimizer.base_lr},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps},
                    {"warmup_iters", cfg.optimizer.warmup_iters},
                    {"warmup_ratio", cfg.optimizer.warmup_ratio},
                    {"max_steps", cfg.optimizer.max_steps},
                    {"min_lr_ratio", cfg.optimizer.min_lr_ratio},
                    {"grad_clip_norm", cfg.optimizer.grad_clip_norm}};
  j["distill"] = {{"aligned_dim", cfg.distill.aligned_dim},
                  {"teacher_dim", cfg.distill.teacher_dim},
                  {"patch_size", cfg.distill.patch_size},
                  {"teacher_block", cfg.distill.teacher_block},
                  {"mode", cfg.distill.mode},
                  {"teacher_path", cfg.distill.teacher_path}};
  j["train"] = {{"steps", cfg.train.steps},
                {"frame_offsets", cfg.train.frame_offsets},
                {"scene", cfg.train.scene_path},
                {"eval_every", cfg.train.eval_every},
                {"log_every", cfg.train.log_every}};
  return j.dump(2);
}

uint64_t config_digest(const Config& cfg) {
  std::string text = config_to_json(cfg);
  return fnv1a64(text.data(), text.size());
}

}  // namespace dego
