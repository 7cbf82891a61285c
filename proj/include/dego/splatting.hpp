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

#include <vector>

#include "dego/core.hpp"
#include "dego/nn.hpp"

namespace dego {

struct SplatConfig {
  double truncation_sigma = 3.0;
  double weight_epsilon = 1e-8;
  double occupancy_threshold = 0.5;

  void validate() const {
    require(truncation_sigma > 0.0 && weight_epsilon > 0.0, ErrorKind::NonPositiveSize,
            "splat constants must be positive");
    require(occupancy_threshold > 0.0 && occupancy_threshold < 1.0, ErrorKind::SpecMismatch,
            "occupancy threshold must lie in (0,1)");
  }
};

struct PredictionHeads {
  Linear occ;  // C_f -> 1
  Linear sem;  // C_f -> C
};

PredictionHeads make_prediction_heads(ParamStore& store, const std::string& prefix, int feature_dim,
                                      int num_classes, std::mt19937_64& rng);

/// opacity * exp(-m2/2) at `point`, zero beyond the truncation ellipsoid.
double gaussian_density(const GaussianPrimitive& g, const Vec3& point, double truncation_sigma);

/// Weighted-average feature splat over voxel centers. The serial scatter and
/// the voxel-parallel gather accumulate in the same per-voxel order, so both
/// produce bit-identical volumes.
FeatureVolume splat_features(const std::vector<GaussianPrimitive>& gaussians,
                             const VoxelGridSpec& spec, const SplatConfig& config);
FeatureVolume splat_features_serial(const std::vector<GaussianPrimitive>& gaussians,
                                    const VoxelGridSpec& spec, const SplatConfig& config);

struct SplatGrads {
  std::vector<Vec3> d_mu;
  std::vector<Vec4> d_rot;
  std::vector<Vec3> d_scale;
  std::vector<double> d_opacity;
  std::vector<VecX> d_feat;
};

/// Adjoint of splat_features given dL/d(data) and optional dL/d(weight).
SplatGrads splat_features_backward(const std::vector<GaussianPrimitive>& gaussians,
                                   const VoxelGridSpec& spec, const SplatConfig& config,
                                   const FeatureVolume& volume, const double* d_data,
                                   const double* d_weight);

/// p_occ per voxel (sigmoid of the occupancy head).
std::vector<double> occupancy_head(const FeatureVolume& volume, const PredictionHeads& heads);
void occupancy_head_backward(const FeatureVolume& volume, const PredictionHeads& heads,
                             const std::vector<double>& p_occ, const double* d_pocc,
                             double* d_volume_data);

/// Stable per-voxel softmax over the semantic head logits, voxel-major V x C.
std::vector<double> semantic_head(const FeatureVolume& volume, const PredictionHeads& heads);
void semantic_head_backward(const FeatureVolume& volume, const PredictionHeads& heads,
                            const std::vector<double>& p_sem, const double* d_psem,
                            double* d_volume_data);

/// argmax class where p_occ >= threshold, FREE elsewhere; ties break low.
SemanticLabelGrid extract_occupancy(const std::vector<double>& p_occ,
                                    const std::vector<double>& p_sem, const VoxelGridSpec& spec,
                                    int num_classes, double threshold);

}  // namespace dego
