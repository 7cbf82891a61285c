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
#include <vector>

#include "dego/nn.hpp"
#include "dego/synthsuite.hpp"

namespace dego {

inline constexpr double kCosineNormEps = 1e-8;

/// Patch-grid teacher features at the reference frame. The channel halves are
/// the spatial-attention and temporal-attention block outputs, concatenated.
/// Patch tokens only; camera and register tokens never appear here.
struct TeacherFeatureStack {
  int views = 0;
  int patch_h = 0;
  int patch_w = 0;
  int channels = 0;  // 2 * C_T when both halves are present
  uint32_t block_index = 0;
  std::vector<float> data;  // view-major, row-major, channel-interleaved

  const float* cell(int view, int py, int px) const {
    return data.data() +
           ((static_cast<int64_t>(view) * patch_h + py) * patch_w + px) * channels;
  }
};

struct AlignmentProjectors {
  Linear teacher_proj;  // (2 C_T) -> C_a
  Linear student_proj;  // C_g -> C_a
  int aligned_dim = 0;
};

AlignmentProjectors make_alignment_projectors(ParamStore& store, const std::string& prefix,
                                              int teacher_channels, int feature_dim,
                                              int aligned_dim, std::mt19937_64& rng);

/// Per-view aligned feature maps, shaped like rendered maps.
struct MapStack {
  int views = 0, height = 0, width = 0, channels = 0;
  std::vector<double> v;

  int64_t pixels() const { return static_cast<int64_t>(height) * width; }
  double* at(int view, int64_t px) {
    return v.data() + (static_cast<int64_t>(view) * pixels() + px) * channels;
  }
  const double* at(int view, int64_t px) const {
    return v.data() + (static_cast<int64_t>(view) * pixels() + px) * channels;
  }
};

/// Project each patch cell to C_a, then bilinearly upsample to the target
/// size (align-corners-false sampling, edge clamped).
MapStack project_teacher(const TeacherFeatureStack& stack, const AlignmentProjectors& projectors,
                         int target_h, int target_w);

/// Accumulates teacher projector grads from dL/d(teacher maps).
void project_teacher_backward(const TeacherFeatureStack& stack,
                              const AlignmentProjectors& projectors, const MapStack& d_maps);

/// Per-gaussian C_a payload rows: student_proj(feat_i).
std::vector<double> project_student(const std::vector<GaussianPrimitive>& gaussians,
                                    const AlignmentProjectors& projectors);

/// Accumulates student projector grads; d_feat, when non-null, receives the
/// per-gaussian feature grads.
void project_student_backward(const std::vector<GaussianPrimitive>& gaussians,
                              const AlignmentProjectors& projectors, const double* d_payload,
                              std::vector<VecX>* d_feat);

/// Mean over valid pixels of (1 - cos); pixels where either vector has norm
/// below kCosineNormEps are excluded from the mean. 0 when nothing counts.
double distillation_loss(const MapStack& teacher, const MapStack& student,
                         const std::vector<uint8_t>& valid);

/// Backward pass; either output may be null. Adds lambda * d(loss)/d(maps).
void distillation_loss_backward(const MapStack& teacher, const MapStack& student,
                                const std::vector<uint8_t>& valid, double lambda,
                                MapStack* d_teacher, MapStack* d_student);

// ---- DEGO-TF1 ------------------------------------------------------------------
// magic "DEGO-TF1", u32 version=1, u32 views, u32 H', u32 W', u32 channels,
// u32 block_index, then per view row-major little-endian f32.

void save_teacher_features(const std::string& path, const TeacherFeatureStack& stack);
TeacherFeatureStack load_teacher_features(const std::string& path);

/// Deterministic desk-scale teacher: per patch cell, half A embeds
/// (majority class, view index), half B embeds (majority class, quantized
/// scene-flow bin). Same seed, same stack.
TeacherFeatureStack synth_teacher(const SyntheticScene& scene, int patch_size, int teacher_dim,
                                  uint64_t seed, uint32_t block_index = 22);

/// The embedding table used by synth_teacher (exposed for direct checks):
/// rows are (key -> unit vector), orthonormal across keys.
std::vector<std::vector<double>> synth_embedding_table(int keys, int dim, uint64_t seed);

}  // namespace dego
