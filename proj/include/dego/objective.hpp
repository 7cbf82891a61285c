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
#include <string>
#include <vector>

#include "dego/deformation.hpp"
#include "dego/distillation.hpp"
#include "dego/metrics.hpp"
#include "dego/rendering.hpp"
#include "dego/splatting.hpp"
#include "dego/synthsuite.hpp"

namespace dego {

// ---- run configuration -------------------------------------------------------

struct GaussianInitConfig {
  int count = 512;
  int feature_dim = kDefaultFeatureDim;
  double scale_multiplier = 1.0;  // times voxel_size
  double opacity = 0.1;
  double feature_range = 0.01;
};

struct DeformationConfig {
  bool enabled = true;
  int hidden_dim = 256;
  int depth = 6;
  DeformationHeadFlags heads;
};

struct LossWeights {
  double seg = 1.0;
  double dep = 0.05;
  double distill = 1.0;
  double def = 1.0;
};

struct OptimizerConfig {
  double base_lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_iters = 200;
  double warmup_ratio = 0.001;
  int max_steps = 2000;
  double min_lr_ratio = 0.01;
  double grad_clip_norm = 5.0;
};

struct DistillConfig {
  int aligned_dim = 32;
  int teacher_dim = 64;  // synthetic C_T; the real teacher uses 2048
  int patch_size = 8;
  int teacher_block = 22;
  std::string mode = "synthetic";  // or "file"
  std::string teacher_path;
};

struct TrainSection {
  int steps = 2000;
  std::vector<int> frame_offsets = {-4, -3, -2, -1, 0, 1, 2, 3};
  std::string scene_path;
  int eval_every = 500;
  int log_every = 10;
};

struct Config {
  uint64_t seed = 1;
  int threads = 0;
  std::string out_dir = "out";
  bool has_grid = false;  // explicit grid given (must then match the scene)
  VoxelGridSpec grid;
  EncodingConfig encoding;
  GaussianInitConfig gaussians;
  DeformationConfig deformation;
  SplatConfig splat;
  LossWeights loss;
  DeformationLossWeights def_loss;
  OptimizerConfig optimizer;
  DistillConfig distill;
  TrainSection train;
};

/// The benchmark voxel range [-40,40]^2 x [-1,5.4] at 0.4 m.
VoxelGridSpec paper_grid_spec();

// ---- model ---------------------------------------------------------------------

struct Model {
  Config cfg;
  ParamStore store;
  DeformationNetwork deform;
  PredictionHeads heads;
  AlignmentProjectors projectors;
  Tensor* g_mu = nullptr;
  Tensor* g_rot = nullptr;
  Tensor* g_log_scale = nullptr;
  Tensor* g_opacity = nullptr;
  Tensor* g_feat = nullptr;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  int count() const { return cfg.gaussians.count; }
};

Model build_model(const Config& cfg);

/// Canonical set from the raw parameters (rot normalized, scale exp,
/// opacity sigmoid). `with_mask` runs the rigidity head per gaussian.
std::vector<GaussianPrimitive> canonical_gaussians(const Model& model, bool with_mask = false);

// ---- losses ----------------------------------------------------------------------

/// Mean cross-entropy over non-IGNORE pixels. Low-alpha pixels are included
/// as-is (composited logits near zero give near-uniform predictions); the
/// alpha map is accepted for signature parity but does not gate anything.
double segmentation_loss(const RenderedMaps& logits, const std::vector<double>& alpha,
                         const std::vector<uint8_t>& labels);

/// Mean |d_hat - d| over pixels valid in both the mask and the pseudo depth.
double depth_loss(const std::vector<double>& depth, const std::vector<uint8_t>& valid,
                  const std::vector<float>& pseudo_depth);

double total_loss(double seg, double dep, double distill, double def, const LossWeights& w);

// ---- optimizer --------------------------------------------------------------------

/// Linear warmup from base_lr*warmup_ratio, cosine decay to base_lr*min_lr_ratio.
double lr_at(int step, const OptimizerConfig& cfg);

class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}

  /// Global-norm clip, decoupled weight decay, bias-corrected moments.
  void step(ParamStore& store);

  int64_t steps_taken() const { return t_; }
  double current_lr() const { return lr_at(static_cast<int>(t_), cfg_); }

 private:
  OptimizerConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---- training ---------------------------------------------------------------------

struct StepLosses {
  double total = 0, seg = 0, dep = 0, distill = 0, def = 0;
};

/// Captured compositing orders and validity gates so gradient checks can hold
/// the depth sort and the alpha-threshold masks fixed across perturbations.
struct FrozenOrders {
  bool capture = true;  // first call fills, later calls replay
  std::vector<std::vector<int>> orders;
  std::vector<std::vector<uint8_t>> depth_valid;  // per render
  std::vector<uint8_t> distill_valid;
};

/// One full forward (and optional backward) pass of the training objective.
StepLosses compute_step(Model& model, const SyntheticScene& scene,
                        const TeacherFeatureStack* teacher, bool with_grads,
                        FrozenOrders* frozen = nullptr);

struct EvalOptions {
  std::vector<int> offsets = {0};
  bool visible_only = false;
  bool with_rayiou = false;
  bool gt_as_pred = false;
};

struct EvalResult {
  AggregateReport agg;
  RayIoUResult rayiou;
  bool has_rayiou = false;
};

/// Splat -> heads -> extract -> confusion against ground truth, pooled over
/// the requested offsets. Offset 0 uses the canonical set (single-frame
/// inference); other offsets run the deformation when enabled.
EvalResult evaluate(const Model& model, const SyntheticScene& scene, const EvalOptions& opt);

/// Prediction grid at one offset (offset 0 = canonical set).
SemanticLabelGrid predict_grid(const Model& model, int offset);

struct TrainResult {
  StepLosses final_losses;
  uint64_t param_digest = 0;
  std::string checkpoint_path;
  std::string metrics_path;
};

/// Full loop: teacher acquisition, per-step losses/backward/adam, metric log
/// `step,loss_total,loss_seg,loss_dep,loss_distill,loss_def,lr`, periodic
/// evaluations, final checkpoint.
TrainResult train(Model& model, const SyntheticScene& scene, const std::string& out_dir,
                  const std::string& config_json);

}  // namespace dego
