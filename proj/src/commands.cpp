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
#include "dego/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dego/checkpoint.hpp"
#include "dego/config.hpp"
#include "dego/objective.hpp"

namespace dego {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_global(Config& cfg, const GlobalOptions& global) {
  if (global.seed.has_value()) cfg.seed = *global.seed;
  if (global.threads != 0) cfg.threads = global.threads;
  if (!global.out.empty()) cfg.out_dir = global.out;
  set_num_threads(cfg.threads);
}

struct LoadedModel {
  Config cfg;
  Model model;
  uint64_t step = 0;
};

LoadedModel model_from_checkpoint(const std::string& path, const GlobalOptions& global) {
  Checkpoint ckpt = load_checkpoint(path);
  require(!ckpt.config_json.empty(), ErrorKind::DigestMismatch,
          "checkpoint carries no embedded config");
  LoadedModel out;
  out.cfg = parse_config_json(ckpt.config_json);
  if (global.threads != 0) out.cfg.threads = global.threads;
  set_num_threads(out.cfg.threads);
  out.model = build_model(out.cfg);
  apply_checkpoint(ckpt, out.model.store);
  out.step = ckpt.step;
  return out;
}

void check_scene_compatible(const Config& cfg, const SyntheticScene& scene) {
  require(cfg.grid == scene.grid(), ErrorKind::DigestMismatch,
          "checkpoint grid does not match the scene grid");
}

}  // namespace

void cmd_gen_scene(const std::string& recipe_path, const std::string& out_dir,
                   const GlobalOptions& global) {
  set_num_threads(global.threads);
  SceneRecipe recipe = recipe_path.empty() ? default_recipe() : parse_recipe_file(recipe_path);
  if (global.seed.has_value()) recipe.seed = *global.seed;
  std::string dir = global.out.empty() ? out_dir : global.out;
  require(!dir.empty(), ErrorKind::MissingFile, "gen-scene needs an output directory");
  SyntheticScene scene = generate_scene(recipe);
  save_scene(scene, dir);
  std::printf("scene %s\ndigest %s\nframes %d cameras %zu\n", dir.c_str(),
              scene_hash(scene).c_str(), scene.frames(), scene.cameras.size());
}

void cmd_train(const std::string& config_path, const GlobalOptions& global) {
  Config cfg = parse_config_file(config_path);
  apply_global(cfg, global);
  require(!cfg.train.scene_path.empty(), ErrorKind::MissingFile,
          "train.scene must point to a scene directory");
  SyntheticScene scene = load_scene(cfg.train.scene_path);
  if (cfg.has_grid) {
    require(cfg.grid == scene.grid(), ErrorKind::SpecMismatch,
            "configured grid does not match the scene grid");
  } else {
    cfg.grid = scene.grid();
    cfg.has_grid = true;
  }

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create output directory: " + cfg.out_dir);
  const std::string config_json = config_to_json(cfg);
  {
    std::ofstream echo(fs::path(cfg.out_dir) / "config.json");
    require(echo.good(), ErrorKind::IoError, "cannot echo the config");
    echo << config_json << "\n";
  }

  Model model = build_model(cfg);
  TrainResult result = train(model, scene, cfg.out_dir, config_json);
  std::printf("final_loss %.12g\n", result.final_losses.total);
  std::printf("param_digest %s\n", hex64(result.param_digest).c_str());
  std::printf("checkpoint %s\n", result.checkpoint_path.c_str());
}

void cmd_eval(const std::string& checkpoint_path, const std::string& scene_dir,
              const EvalFlags& flags, const GlobalOptions& global) {
  LoadedModel loaded = model_from_checkpoint(checkpoint_path, global);
  SyntheticScene scene = load_scene(scene_dir);
  check_scene_compatible(loaded.cfg, scene);

  EvalOptions opt;
  opt.offsets = {0};
  opt.visible_only = flags.visible_only;
  opt.with_rayiou = flags.rayiou;
  opt.gt_as_pred = flags.gt_as_pred;
  EvalResult ev = evaluate(loaded.model, scene, opt);

  const ClassTaxonomy& tax = ClassTaxonomy::standard();
  json report;
  json per_class = json::object();
  for (int c = 0; c < kNumClasses; ++c)
    per_class[tax.names[c]] = ev.agg.defined[c] ? json(ev.agg.per_class[c]) : json(nullptr);
  report["per_class"] = per_class;
  report["miou"] = ev.agg.miou;
  report["insm"] = ev.agg.insm;
  report["scnm"] = ev.agg.scnm;
  report["hcm"] = ev.agg.hcm;
  report["iou"] = ev.agg.iou;
  if (ev.has_rayiou) {
    json r;
    for (size_t t = 0; t < ev.rayiou.thresholds.size(); ++t)
      r["at_" + std::to_string(static_cast<int>(ev.rayiou.thresholds[t]))] = ev.rayiou.at[t];
    r["mean"] = ev.rayiou.mean;
    report["rayiou"] = r;
  } else {
    report["rayiou"] = nullptr;
  }

  std::string text = report.dump(2);
  std::printf("%s\n", text.c_str());
  std::string out_path = flags.report_path.empty() ? global.out : flags.report_path;
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    require(os.good(), ErrorKind::IoError, "cannot write report: " + out_path);
    os << text << "\n";
  }
}

void cmd_render(const std::string& checkpoint_path, const std::string& scene_dir, int frame_offset,
                int camera_index, const std::string& out_prefix, const GlobalOptions& global) {
  LoadedModel loaded = model_from_checkpoint(checkpoint_path, global);
  SyntheticScene scene = load_scene(scene_dir);
  check_scene_compatible(loaded.cfg, scene);
  require(camera_index >= 0 && camera_index < static_cast<int>(scene.cameras.size()),
          ErrorKind::IndexOutOfRange, "camera index out of range");
  require(std::abs(frame_offset) <= scene.max_offset(), ErrorKind::IndexOutOfRange,
          "frame offset outside the scene clip");

  const Model& model = loaded.model;
  std::vector<GaussianPrimitive> canonical = canonical_gaussians(model);
  std::vector<GaussianPrimitive> gaussians;
  if (model.cfg.deformation.enabled) {
    // Every offset, including 0, goes through the deformation path so that
    // zero-initialized heads reproduce identical frames bitwise.
    auto deformed = deform_set(canonical, {frame_offset}, model.deform);
    gaussians = std::move(deformed.at(frame_offset));
  } else {
    gaussians = std::move(canonical);
  }

  const CameraModel& cam = scene.cameras[camera_index];
  RenderAllResult maps = render_all(gaussians, cam, model.heads.sem, model.projectors.student_proj);

  const int64_t npx = static_cast<int64_t>(cam.height) * cam.width;
  std::vector<float> argmax(static_cast<size_t>(npx));
  for (int64_t px = 0; px < npx; ++px) {
    if (maps.semantic.alpha[px] < kAlphaValid) {
      argmax[px] = static_cast<float>(kIgnoreLabel);
      continue;
    }
    const double* row = maps.semantic.payload.data() + px * kNumClasses;
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (row[c] > row[best]) best = c;
    argmax[px] = static_cast<float>(best);
  }
  std::vector<double> depth = normalized_depth(maps.depth);

  save_image(out_prefix + ".sem.img", cam.height, cam.width, 1, argmax);
  save_image(out_prefix + ".depth.img", cam.height, cam.width, 1, depth);
  save_image(out_prefix + ".alpha.img", cam.height, cam.width, 1, maps.semantic.alpha);
  std::printf("rendered offset %d camera %d -> %s.{sem,depth,alpha}.img\n", frame_offset,
              camera_index, out_prefix.c_str());
}

void cmd_dump_teacher(const std::string& scene_dir, const TeacherFlags& flags,
                      const std::string& out_path, const GlobalOptions& global) {
  set_num_threads(global.threads);
  require(flags.mode == "synthetic", ErrorKind::TypeError,
          "dump-teacher supports only the synthetic mode; external teacher files "
          "are produced out-of-band and consumed directly");
  SyntheticScene scene = load_scene(scene_dir);
  uint64_t seed = global.seed.value_or(scene.recipe.seed);
  TeacherFeatureStack stack = synth_teacher(scene, flags.patch_size, flags.teacher_dim, seed,
                                            static_cast<uint32_t>(flags.block_index));
  save_teacher_features(out_path, stack);
  std::printf("teacher %s views %d patch %dx%d channels %d block %u\n", out_path.c_str(),
              stack.views, stack.patch_h, stack.patch_w, stack.channels, stack.block_index);
}

void cmd_export_voxels(const std::string& checkpoint_path, const std::string& out_path,
                       const GlobalOptions& global) {
  LoadedModel loaded = model_from_checkpoint(checkpoint_path, global);
  SemanticLabelGrid grid = predict_grid(loaded.model, 0);
  save_label_grid(out_path, grid);
  std::printf("voxels %s dims %d %d %d\n", out_path.c_str(), grid.spec.dims[0], grid.spec.dims[1],
              grid.spec.dims[2]);
}

}  // namespace dego
