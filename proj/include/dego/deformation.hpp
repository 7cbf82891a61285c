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

#include <map>
#include <vector>

#include "dego/encoding.hpp"

namespace dego {

/// Gaussians with a rigidity mask below this take the pure rigid branch for
/// rotation/scale/opacity: the nonrigid deltas are hard-zeroed, not blended.
inline constexpr double kRigidMaskGate = 0.1;

struct DeformationHeadFlags {
  bool rotation = true;
  bool scale = true;
  bool opacity = true;
  bool mask = true;
};

struct DeformationNetwork {
  EncodingConfig enc;
  int feature_dim = kDefaultFeatureDim;
  FeatureNet featurenet;
  TimeProjector time_projector;
  Linear head_rigid_mu;     // D_h -> 3
  Linear head_def_mu;       // D_h -> 3
  Linear head_def_rot;      // D_h -> 4
  Linear head_def_scale;    // D_h -> 3
  Linear head_def_opacity;  // D_h -> 1
  Linear head_mask;         // (C_g + position encoding) -> 1, then sigmoid
  DeformationHeadFlags enabled;

  int hidden_dim() const { return featurenet.mlp.out_dim(); }
  int mask_input_dim() const { return feature_dim + enc.position_encoding_dim(); }
};

/// FeatureNet/time projector get fan-in uniform init; every head starts at
/// exactly zero so the deformation is the identity at initialization.
DeformationNetwork make_deformation_network(ParamStore& store, const std::string& prefix,
                                            const EncodingConfig& enc, int feature_dim,
                                            int hidden_dim, int depth,
                                            const DeformationHeadFlags& flags,
                                            std::mt19937_64& rng);

struct GaussianUpdate {
  Vec3 d_mu = Vec3::Zero();
  Vec4 d_rot = Vec4::Zero();      // additive quaternion delta (w,x,y,z)
  Vec3 d_scale = Vec3::Zero();    // log-scale delta
  double d_opacity = 0.0;         // logit delta
};

/// m = sigmoid(head_mask([feat, gamma_p])); time-independent.
double predict_rigidity_mask(const VecX& feat, const VecX& gamma_p, const DeformationNetwork& net);

/// Rigid branch: position offset only, all other deltas structurally zero.
GaussianUpdate predict_rigid_offset(const VecX& h, const DeformationNetwork& net);

/// Nonrigid branch: all four deltas; a disabled head yields exactly zero.
GaussianUpdate predict_nonrigid_delta(const VecX& h, const DeformationNetwork& net);

GaussianUpdate compose_update(double m, const GaussianUpdate& rig, const GaussianUpdate& def);

GaussianPrimitive apply_update(const GaussianPrimitive& g, const GaussianUpdate& upd);

struct DeformationLossWeights {
  double mu = 1.0;
  double rot = 1.0;
  double scale = 1.0;
  double opacity = 1.0;
  double reg = 1e-3;
  double mask = 1e-2;
};

/// lambda_reg * mean_{i,t} sum_p lambda_p ||dp||^2 + lambda_mask * mean_i m(1-m).
double deformation_loss(const std::vector<std::vector<GaussianUpdate>>& updates_per_offset,
                        const std::vector<double>& masks, const DeformationLossWeights& weights);

// ---- batched pass with retained state for the training backward -------------

class DeformationPass {
 public:
  DeformationPass(const DeformationNetwork& net, const std::vector<GaussianPrimitive>& canonical,
                  const std::vector<int>& offsets);

  void forward();

  int count() const { return n_; }
  const std::vector<int>& offsets() const { return offsets_; }
  const std::vector<double>& masks() const { return masks_; }
  const GaussianPrimitive& deformed(int offset_index, int i) const {
    return deformed_[static_cast<size_t>(offset_index) * n_ + i];
  }
  const std::vector<GaussianPrimitive>& deformed_flat() const { return deformed_; }
  const GaussianUpdate& update(int offset_index, int i) const {
    return composed_[static_cast<size_t>(offset_index) * n_ + i];
  }
  std::vector<std::vector<GaussianUpdate>> updates_per_offset() const;

  struct Upstream {
    // per (offset, gaussian), offset-major; all sized offsets*n (or empty)
    std::vector<Vec3> d_mu;
    std::vector<Vec4> d_rot;
    std::vector<Vec3> d_scale;
    std::vector<double> d_opacity;
    std::vector<GaussianUpdate> d_update;  // e.g. from the regularizer
    std::vector<double> d_mask;            // per gaussian
  };

  struct CanonicalGrads {
    std::vector<Vec3> d_mu;
    std::vector<Vec4> d_rot;  // w.r.t. the (unit) canonical quaternion entries
    std::vector<Vec3> d_scale;
    std::vector<double> d_opacity;
    std::vector<VecX> d_feat;
  };

  /// Accumulates network parameter grads and returns canonical-field grads.
  CanonicalGrads backward(const Upstream& up) const;

 private:
  const DeformationNetwork& net_;
  const std::vector<GaussianPrimitive>& canonical_;
  std::vector<int> offsets_;
  int n_ = 0;

  std::vector<double> gamma_p_;    // n x P
  std::vector<double> mask_pre_;   // n
  std::vector<double> masks_;      // n
  std::vector<std::vector<std::vector<double>>> time_traces_;  // per offset
  std::vector<VecX> e_t_;          // per offset
  std::vector<int> slot_dims_;
  std::vector<int64_t> slot_offsets_;
  int64_t slots_per_item_ = 0;
  std::vector<double> fn_arena_;   // (offsets*n) x slots_per_item
  std::vector<GaussianUpdate> rig_, def_, composed_;
  std::vector<GaussianPrimitive> deformed_;

  void item_slots(int64_t item, std::vector<double*>& ptrs) const;
};

/// Full pipeline per offset: encode -> hidden -> heads -> compose -> apply.
std::map<int, std::vector<GaussianPrimitive>> deform_set(
    const std::vector<GaussianPrimitive>& gaussians, const std::vector<int>& frame_offsets,
    const DeformationNetwork& net);

}  // namespace dego
