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

#include <optional>
#include <string>

namespace dego {

// CLI entry points, callable in-process by the tests. Each throws dego::Error
// on failure; the binary maps Error::exit_code() onto the process status.

struct GlobalOptions {
  std::optional<uint64_t> seed;
  int threads = 0;      // 0 = hardware
  std::string out;      // overrides config/output paths where applicable
};

/// Writes the scene directory and prints "digest <hex>".
void cmd_gen_scene(const std::string& recipe_path, const std::string& out_dir,
                   const GlobalOptions& global);

/// Runs the training loop; prints the final loss and the parameter digest.
void cmd_train(const std::string& config_path, const GlobalOptions& global);

struct EvalFlags {
  bool visible_only = false;
  bool rayiou = false;
  bool gt_as_pred = false;
  std::string report_path;  // empty = stdout only
};

void cmd_eval(const std::string& checkpoint_path, const std::string& scene_dir,
              const EvalFlags& flags, const GlobalOptions& global);

/// Writes {out_prefix}.sem.img / .depth.img / .alpha.img for one deformed frame.
void cmd_render(const std::string& checkpoint_path, const std::string& scene_dir, int frame_offset,
                int camera_index, const std::string& out_prefix, const GlobalOptions& global);

struct TeacherFlags {
  std::string mode = "synthetic";
  int patch_size = 8;
  int teacher_dim = 64;
  int block_index = 22;
};

void cmd_dump_teacher(const std::string& scene_dir, const TeacherFlags& flags,
                      const std::string& out_path, const GlobalOptions& global);

void cmd_export_voxels(const std::string& checkpoint_path, const std::string& out_path,
                       const GlobalOptions& global);

}  // namespace dego
