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
#include <cstdio>

#include <CLI11.hpp>

#include "dego/commands.hpp"
#include "dego/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dego - deformable gaussian occupancy toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  dego::GlobalOptions global;
  uint64_t seed_value = 0;
  bool seed_given = false;
  app.add_option("--seed", seed_value, "override the seed")->each([&](const std::string&) {
    seed_given = true;
  });
  app.add_option("--threads", global.threads, "worker threads (1 = serial reference path)");
  app.add_option("--out", global.out, "output path override");

  std::string recipe_path, scene_dir, config_path, checkpoint_path, out_path, out_prefix;
  int frame_offset = 0, camera_index = 0;
  dego::EvalFlags eval_flags;
  dego::TeacherFlags teacher_flags;

  CLI::App* gen = app.add_subcommand("gen-scene", "generate a synthetic scene directory");
  gen->add_option("--recipe", recipe_path, "recipe JSON (defaults to the built-in recipe)");
  gen->add_option("--out-dir", out_path, "scene output directory");

  CLI::App* tr = app.add_subcommand("train", "train on a synthetic scene");
  tr->add_option("config", config_path, "config JSON path")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint against a scene");
  ev->add_option("checkpoint", checkpoint_path)->required();
  ev->add_option("scene", scene_dir)->required();
  ev->add_flag("--visible-only", eval_flags.visible_only, "restrict to camera-visible voxels");
  ev->add_flag("--rayiou", eval_flags.rayiou, "also compute RayIoU@{1,2,4}");
  ev->add_flag("--gt-as-pred", eval_flags.gt_as_pred, "debug: feed ground truth as prediction");
  ev->add_option("--report", eval_flags.report_path, "write the JSON report here");

  CLI::App* rd = app.add_subcommand("render", "render one deformed frame");
  rd->add_option("checkpoint", checkpoint_path)->required();
  rd->add_option("scene", scene_dir)->required();
  rd->add_option("--frame", frame_offset, "frame offset (0 = reference)");
  rd->add_option("--camera", camera_index, "camera index");
  rd->add_option("--out-prefix", out_prefix, "output file prefix")->required();

  CLI::App* dt = app.add_subcommand("dump-teacher", "write a teacher feature file");
  dt->add_option("scene", scene_dir)->required();
  dt->add_option("--mode", teacher_flags.mode, "teacher mode (synthetic)");
  dt->add_option("--patch-size", teacher_flags.patch_size);
  dt->add_option("--teacher-dim", teacher_flags.teacher_dim);
  dt->add_option("--block", teacher_flags.block_index);
  dt->add_option("--out-file", out_path, "teacher output path")->required();

  CLI::App* ex = app.add_subcommand("export-voxels", "export the reference-frame occupancy");
  ex->add_option("checkpoint", checkpoint_path)->required();
  ex->add_option("--out-file", out_path, "voxel output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (seed_given) global.seed = seed_value;

  try {
    if (gen->parsed()) {
      dego::cmd_gen_scene(recipe_path, out_path, global);
    } else if (tr->parsed()) {
      dego::cmd_train(config_path, global);
    } else if (ev->parsed()) {
      dego::cmd_eval(checkpoint_path, scene_dir, eval_flags, global);
    } else if (rd->parsed()) {
      dego::cmd_render(checkpoint_path, scene_dir, frame_offset, camera_index, out_prefix, global);
    } else if (dt->parsed()) {
      dego::cmd_dump_teacher(scene_dir, teacher_flags, out_path, global);
    } else if (ex->parsed()) {
      dego::cmd_export_voxels(checkpoint_path, out_path, global);
    }
  } catch (const dego::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
