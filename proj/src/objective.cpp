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
#include "dego/objective.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dego/checkpoint.hpp"

namespace dego {

namespace fs = std::filesystem;

VoxelGridSpec paper_grid_spec() {
  return make_grid_spec(Vec3(-40, -40, -1), Vec3(40, 40, 5.4), 0.4);
}

Model build_model(const Config& cfg) {
  cfg.encoding.validate();
  cfg.splat.validate();
  require(cfg.gaussians.count >= 1, ErrorKind::NonPositiveSize, "gaussian count must be >= 1");

  Model model;
  model.cfg = cfg;
  std::mt19937_64 rng(cfg.seed);

  model.deform = make_deformation_network(model.store, "deform", cfg.encoding,
                                          cfg.gaussians.feature_dim, cfg.deformation.hidden_dim,
                                          cfg.deformation.depth, cfg.deformation.heads, rng);
  model.heads = make_prediction_heads(model.store, "heads", cfg.gaussians.feature_dim,
                                      kNumClasses, rng);
  model.projectors = make_alignment_projectors(model.store, "distill", 2 * cfg.distill.teacher_dim,
                                               cfg.gaussians.feature_dim, cfg.distill.aligned_dim,
                                               rng);

  const int n = cfg.gaussians.count;
  const int cg = cfg.gaussians.feature_dim;
  model.g_mu = &model.store.create("gaussians/mu", {n, 3});
  model.g_rot = &model.store.create("gaussians/rot", {n, 4});
  model.g_log_scale = &model.store.create("gaussians/log_scale", {n, 3});
  model.g_opacity = &model.store.create("gaussians/opacity_logit", {n});
  model.g_feat = &model.store.create("gaussians/feat", {n, cg});

  const VoxelGridSpec& grid = cfg.grid;
  const double log_scale = std::log(grid.voxel_size * cfg.gaussians.scale_multiplier);
  const double opacity_logit = std::log(cfg.gaussians.opacity / (1.0 - cfg.gaussians.opacity));
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a)
      model.g_mu->value[i * 3 + a] =
          uniform_range(rng, grid.min_corner[a], grid.max_corner[a]);
    model.g_rot->value[i * 4 + 0] = 1.0;
    for (int a = 0; a < 3; ++a) model.g_log_scale->value[i * 3 + a] = log_scale;
    model.g_opacity->value[i] = opacity_logit;
    for (int c = 0; c < cg; ++c)
      model.g_feat->value[static_cast<int64_t>(i) * cg + c] =
          uniform_range(rng, -cfg.gaussians.feature_range, cfg.gaussians.feature_range);
  }
  return model;
}

std::vector<GaussianPrimitive> canonical_gaussians(const Model& model, bool with_mask) {
  const int n = model.count();
  const int cg = model.cfg.gaussians.feature_dim;
  std::vector<GaussianPrimitive> out(n);
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive& g = out[i];
    g.mu = Vec3(model.g_mu->value[i * 3], model.g_mu->value[i * 3 + 1],
                model.g_mu->value[i * 3 + 2]);
    g.rot = normalize_quaternion(Quat(model.g_rot->value[i * 4], model.g_rot->value[i * 4 + 1],
                                      model.g_rot->value[i * 4 + 2],
                                      model.g_rot->value[i * 4 + 3]));
    for (int a = 0; a < 3; ++a) g.scale[a] = std::exp(model.g_log_scale->value[i * 3 + a]);
    g.opacity = 1.0 / (1.0 + std::exp(-model.g_opacity->value[i]));
    g.feat = Eigen::Map<const VecX>(model.g_feat->value.data() + static_cast<int64_t>(i) * cg, cg);
    g.mask = 0.5;
  }
  if (with_mask) {
    for (int i = 0; i < n; ++i) {
      VecX gp = encode_position(out[i].mu, model.cfg.encoding.position_levels);
      out[i].mask = model.deform.enabled.mask ? predict_rigidity_mask(out[i].feat, gp, model.deform)
                                              : 1.0;
    }
  }
  return out;
}

// ---- losses -----------------------------------------------------------------

namespace {

// Accumulates sum of CE terms and the valid-pixel count for pooled means.
void seg_ce_accumulate(const RenderedMaps& logits, const std::vector<uint8_t>& labels, double& sum,
                       int64_t& count) {
  const int classes = logits.payload_dim;
  const int64_t npx = static_cast<int64_t>(logits.height) * logits.width;
  require(static_cast<int64_t>(labels.size()) == npx, ErrorKind::ShapeMismatch,
          "label map size mismatch");
  for (int64_t px = 0; px < npx; ++px) {
    const uint8_t y = labels[px];
    if (y == kIgnoreLabel) continue;
    require(y < classes, ErrorKind::ShapeMismatch, "pseudo label out of class range");
    const double* l = logits.payload.data() + px * classes;
    double mx = l[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, l[c]);
    double lse = 0.0;
    for (int c = 0; c < classes; ++c) lse += std::exp(l[c] - mx);
    lse = mx + std::log(lse);
    sum += lse - l[y];
    ++count;
  }
}

}  // namespace

double segmentation_loss(const RenderedMaps& logits, const std::vector<double>& alpha,
                         const std::vector<uint8_t>& labels) {
  (void)alpha;  // low-alpha pixels are included as-is
  double sum = 0.0;
  int64_t count = 0;
  seg_ce_accumulate(logits, labels, sum, count);
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

double depth_loss(const std::vector<double>& depth, const std::vector<uint8_t>& valid,
                  const std::vector<float>& pseudo_depth) {
  require(depth.size() == valid.size() && depth.size() == pseudo_depth.size(),
          ErrorKind::ShapeMismatch, "depth map sizes differ");
  double sum = 0.0;
  int64_t count = 0;
  for (size_t px = 0; px < depth.size(); ++px) {
    if (valid[px] == 0 || pseudo_depth[px] <= 0.0f) continue;
    sum += std::abs(depth[px] - pseudo_depth[px]);
    ++count;
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

double total_loss(double seg, double dep, double distill, double def, const LossWeights& w) {
  double total = w.seg * seg + w.dep * dep + w.distill * distill + w.def * def;
  require(std::isfinite(total), ErrorKind::NonFinite, "total loss is not finite");
  return total;
}

// ---- optimizer ----------------------------------------------------------------

double lr_at(int step, const OptimizerConfig& cfg) {
  if (step < cfg.warmup_iters) {
    double frac = static_cast<double>(step) / cfg.warmup_iters;
    return cfg.base_lr * (cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * frac);
  }
  const double min_lr = cfg.base_lr * cfg.min_lr_ratio;
  const int span = std::max(1, cfg.max_steps - cfg.warmup_iters);
  double progress = static_cast<double>(step - cfg.warmup_iters) / span;
  progress = std::min(1.0, std::max(0.0, progress));
  return min_lr + 0.5 * (cfg.base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
}

void AdamW::step(ParamStore& store) {
  auto tensors = store.all();
  double norm2 = 0.0;
  for (Tensor* t : tensors)
    for (double g : t->grad) norm2 += g * g;
  require(std::isfinite(norm2), ErrorKind::NonFiniteGradient, "gradient norm is not finite");
  const double norm = std::sqrt(norm2);
  double clip_scale = 1.0;
  if (cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm)
    clip_scale = cfg_.grad_clip_norm / norm;

  const double lr = lr_at(static_cast<int>(t_), cfg_);
  const int64_t t = t_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));

  for (Tensor* tensor : tensors) {
    auto& m = m_[tensor->name];
    auto& v = v_[tensor->name];
    if (m.empty()) {
      m.assign(tensor->value.size(), 0.0);
      v.assign(tensor->value.size(), 0.0);
    }
    for (size_t i = 0; i < tensor->value.size(); ++i) {
      const double g = tensor->grad[i] * clip_scale;
      double& p = tensor->value[i];
      p -= lr * cfg_.weight_decay * p;  // decoupled decay
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  ++t_;
}

// ---- training step ----------------------------------------------------------------

namespace {

struct RenderRecord {
  int offset_index = 0;
  int camera = 0;
  bool has_features = false;
  int payload_dim = 0;
  std::vector<double> payload;      // N x P
  std::vector<uint8_t> depth_valid;  // alpha >= threshold and pseudo depth > 0
  RenderForward fwd;
};

}  // namespace

StepLosses compute_step(Model& model, const SyntheticScene& scene,
                        const TeacherFeatureStack* teacher, bool with_grads,
                        FrozenOrders* frozen) {
  const Config& cfg = model.cfg;
  const int n = model.count();
  const int cg = cfg.gaussians.feature_dim;
  const int classes = kNumClasses;
  const int ca = cfg.distill.aligned_dim;
  const bool use_deform = cfg.deformation.enabled;
  const bool distill_active = cfg.loss.distill > 0.0 && teacher != nullptr;
  const std::vector<int>& offsets = cfg.train.frame_offsets;
  require(!offsets.empty(), ErrorKind::SpecMismatch, "no frame offsets configured");
  for (int t : offsets)
    require(std::abs(t) <= scene.max_offset(), ErrorKind::SpecMismatch,
            "frame offset outside the scene clip");

  std::vector<GaussianPrimitive> canonical = canonical_gaussians(model);

  DeformationPass pass(model.deform, canonical, offsets);
  std::vector<std::vector<GaussianPrimitive>> frames;
  if (use_deform) {
    pass.forward();
    frames.resize(offsets.size());
    for (size_t oi = 0; oi < offsets.size(); ++oi) {
      frames[oi].resize(n);
      for (int i = 0; i < n; ++i) frames[oi][i] = pass.deformed(static_cast<int>(oi), i);
    }
  }
  auto frame_gaussians = [&](size_t oi) -> const std::vector<GaussianPrimitive>& {
    return use_deform ? frames[oi] : canonical;
  };

  // Per-gaussian payload blocks shared by every render.
  std::vector<double> sem_rows(static_cast<size_t>(n) * classes);
  for (int i = 0; i < n; ++i)
    model.heads.sem.forward(canonical[i].feat.data(),
                            sem_rows.data() + static_cast<int64_t>(i) * classes);
  std::vector<double> feat_rows;
  MapStack teacher_maps;
  if (distill_active) {
    feat_rows = project_student(canonical, model.projectors);
    teacher_maps = project_teacher(*teacher, model.projectors, scene.cameras[0].height,
                                   scene.cameras[0].width);
  }

  double seg_sum = 0.0, dep_sum = 0.0;
  int64_t seg_count = 0, dep_count = 0;
  std::vector<RenderRecord> records;
  MapStack student_maps;
  std::vector<uint8_t> distill_valid;
  if (distill_active) {
    student_maps.views = static_cast<int>(scene.cameras.size());
    student_maps.height = scene.cameras[0].height;
    student_maps.width = scene.cameras[0].width;
    student_maps.channels = ca;
    student_maps.v.assign(static_cast<size_t>(student_maps.views) * student_maps.pixels() * ca,
                          0.0);
    distill_valid.assign(static_cast<size_t>(student_maps.views) * student_maps.pixels(), 0);
  }

  int render_index = 0;
  for (size_t oi = 0; oi < offsets.size(); ++oi) {
    const bool has_feat = distill_active && offsets[oi] == 0;
    const int P = classes + (has_feat ? ca : 0) + 1;
    const int frame_idx = scene.frame_of_offset(offsets[oi]);
    const std::vector<GaussianPrimitive>& gs = frame_gaussians(oi);

    for (size_t v = 0; v < scene.cameras.size(); ++v) {
      const CameraModel& cam = scene.cameras[v];
      RenderRecord rec;
      rec.offset_index = static_cast<int>(oi);
      rec.camera = static_cast<int>(v);
      rec.has_features = has_feat;
      rec.payload_dim = P;
      rec.payload.assign(static_cast<size_t>(n) * P, 0.0);
      for (int i = 0; i < n; ++i) {
        double* row = rec.payload.data() + static_cast<int64_t>(i) * P;
        std::memcpy(row, sem_rows.data() + static_cast<int64_t>(i) * classes,
                    sizeof(double) * classes);
        if (has_feat)
          std::memcpy(row + classes, feat_rows.data() + static_cast<int64_t>(i) * ca,
                      sizeof(double) * ca);
        auto proj = project_gaussian(gs[i], cam);
        row[P - 1] = proj.has_value() ? proj->depth : 0.0;
      }

      const std::vector<int>* order = nullptr;
      if (frozen != nullptr && !frozen->capture) {
        require(render_index < static_cast<int>(frozen->orders.size()), ErrorKind::ShapeMismatch,
                "frozen order list too short");
        order = &frozen->orders[render_index];
      }
      rec.fwd = render_forward(gs, rec.payload.data(), P, cam, order);
      if (frozen != nullptr && frozen->capture) {
        std::vector<int> captured;
        captured.reserve(rec.fwd.order.size());
        for (int slot : rec.fwd.order) captured.push_back(rec.fwd.gaussian_index[slot]);
        frozen->orders.push_back(std::move(captured));
      }
      ++render_index;

      // Segmentation terms on the logit channels.
      {
        const int64_t npx = static_cast<int64_t>(cam.height) * cam.width;
        const auto& labels = scene.seg[frame_idx][v];
        for (int64_t px = 0; px < npx; ++px) {
          const uint8_t y = labels[px];
          if (y == kIgnoreLabel) continue;
          const double* l = rec.fwd.maps.payload.data() + px * P;
          double mx = l[0];
          for (int c = 1; c < classes; ++c) mx = std::max(mx, l[c]);
          double lse = 0.0;
          for (int c = 0; c < classes; ++c) lse += std::exp(l[c] - mx);
          seg_sum += mx + std::log(lse) - l[y];
          ++seg_count;
        }
      }
      // Depth terms on the alpha-normalized depth channel. The validity gate
      // is captured/replayed through `frozen` for gradient checks.
      {
        const int64_t npx = static_cast<int64_t>(cam.height) * cam.width;
        const auto& pseudo = scene.depth[frame_idx][v];
        rec.depth_valid.assign(static_cast<size_t>(npx), 0);
        if (frozen != nullptr && !frozen->capture) {
          rec.depth_valid = frozen->depth_valid[render_index - 1];
        } else {
          for (int64_t px = 0; px < npx; ++px)
            rec.depth_valid[px] =
                rec.fwd.maps.alpha[px] >= kAlphaValid && pseudo[px] > 0.0f ? 1 : 0;
          if (frozen != nullptr) frozen->depth_valid.push_back(rec.depth_valid);
        }
        for (int64_t px = 0; px < npx; ++px) {
          if (rec.depth_valid[px] == 0) continue;
          const double a = rec.fwd.maps.alpha[px];
          const double dhat = rec.fwd.maps.payload[px * P + (P - 1)] / (a + kDepthNormEps);
          dep_sum += std::abs(dhat - pseudo[px]);
          ++dep_count;
        }
      }
      if (has_feat) {
        const int64_t npx = student_maps.pixels();
        for (int64_t px = 0; px < npx; ++px) {
          std::memcpy(student_maps.at(static_cast<int>(v), px),
                      rec.fwd.maps.payload.data() + px * P + classes, sizeof(double) * ca);
          distill_valid[static_cast<size_t>(v) * npx + px] =
              rec.fwd.maps.alpha[px] >= kAlphaValid ? 1 : 0;
        }
      }
      records.push_back(std::move(rec));
    }
  }
  if (distill_active && frozen != nullptr) {
    if (!frozen->capture)
      distill_valid = frozen->distill_valid;
    else
      frozen->distill_valid = distill_valid;
  }
  if (frozen != nullptr && frozen->capture) frozen->capture = false;

  StepLosses losses;
  losses.seg = seg_count > 0 ? seg_sum / seg_count : 0.0;
  losses.dep = dep_count > 0 ? dep_sum / dep_count : 0.0;
  losses.distill =
      distill_active ? distillation_loss(teacher_maps, student_maps, distill_valid) : 0.0;
  losses.def =
      use_deform ? deformation_loss(pass.updates_per_offset(), pass.masks(), cfg.def_loss) : 0.0;
  losses.total = total_loss(losses.seg, losses.dep, losses.distill, losses.def, cfg.loss);

  if (!with_grads) return losses;

  model.store.zero_grad();

  // Distillation map grads (both sides) once over all views.
  MapStack d_student;
  MapStack d_teacher;
  if (distill_active) {
    d_student = student_maps;
    std::fill(d_student.v.begin(), d_student.v.end(), 0.0);
    d_teacher = teacher_maps;
    std::fill(d_teacher.v.begin(), d_teacher.v.end(), 0.0);
    distillation_loss_backward(teacher_maps, student_maps, distill_valid, cfg.loss.distill,
                               &d_teacher, &d_student);
  }

  DeformationPass::Upstream up;
  std::vector<Vec3> can_d_mu(n, Vec3::Zero());
  std::vector<Vec4> can_d_rot(n, Vec4::Zero());
  std::vector<Vec3> can_d_scale(n, Vec3::Zero());
  std::vector<double> can_d_opacity(n, 0.0);
  std::vector<VecX> d_feat(n, VecX::Zero(cg));
  if (use_deform) {
    const size_t items = offsets.size() * static_cast<size_t>(n);
    up.d_mu.assign(items, Vec3::Zero());
    up.d_rot.assign(items, Vec4::Zero());
    up.d_scale.assign(items, Vec3::Zero());
    up.d_opacity.assign(items, 0.0);
    up.d_update.assign(items, GaussianUpdate{});
    up.d_mask.assign(n, 0.0);
  }

  std::vector<double> d_sem_rows(static_cast<size_t>(n) * classes, 0.0);
  std::vector<double> d_feat_rows;
  if (distill_active) d_feat_rows.assign(static_cast<size_t>(n) * ca, 0.0);

  const double seg_scale = seg_count > 0 ? cfg.loss.seg / static_cast<double>(seg_count) : 0.0;
  const double dep_scale = dep_count > 0 ? cfg.loss.dep / static_cast<double>(dep_count) : 0.0;

  for (RenderRecord& rec : records) {
    const int oi = rec.offset_index;
    const int v = rec.camera;
    const int P = rec.payload_dim;
    const int frame_idx = scene.frame_of_offset(offsets[oi]);
    const CameraModel& cam = scene.cameras[v];
    const std::vector<GaussianPrimitive>& gs = frame_gaussians(oi);
    const int64_t npx = static_cast<int64_t>(cam.height) * cam.width;

    std::vector<double> d_maps(static_cast<size_t>(npx) * P, 0.0);
    std::vector<double> d_alpha(static_cast<size_t>(npx), 0.0);

    if (seg_scale > 0.0) {
      const auto& labels = scene.seg[frame_idx][v];
      for (int64_t px = 0; px < npx; ++px) {
        const uint8_t y = labels[px];
        if (y == kIgnoreLabel) continue;
        const double* l = rec.fwd.maps.payload.data() + px * P;
        double mx = l[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, l[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) denom += std::exp(l[c] - mx);
        double* dst = d_maps.data() + px * P;
        for (int c = 0; c < classes; ++c) {
          double p = std::exp(l[c] - mx) / denom;
          dst[c] += seg_scale * (p - (c == y ? 1.0 : 0.0));
        }
      }
    }
    if (dep_scale > 0.0) {
      const auto& pseudo = scene.depth[frame_idx][v];
      for (int64_t px = 0; px < npx; ++px) {
        if (rec.depth_valid[px] == 0) continue;
        const double a = rec.fwd.maps.alpha[px];
        const double pd = rec.fwd.maps.payload[px * P + (P - 1)];
        const double inv = 1.0 / (a + kDepthNormEps);
        const double dhat = pd * inv;
        const double dz = dep_scale * (dhat >= pseudo[px] ? 1.0 : -1.0);
        d_maps[px * P + (P - 1)] += dz * inv;
        d_alpha[px] += -dz * pd * inv * inv;
      }
    }
    if (rec.has_features && distill_active) {
      for (int64_t px = 0; px < npx; ++px) {
        const double* src = d_student.at(v, px);
        double* dst = d_maps.data() + px * P + classes;
        for (int c = 0; c < ca; ++c) dst[c] += src[c];
      }
    }

    RenderGrads grads =
        render_backward(rec.fwd, gs, rec.payload.data(), d_maps.data(), d_alpha.data(), cam, P - 1);

    for (int i = 0; i < n; ++i) {
      if (use_deform) {
        const size_t item = static_cast<size_t>(oi) * n + i;
        up.d_mu[item] += grads.d_mu[i];
        up.d_rot[item] += grads.d_rot[i];
        up.d_scale[item] += grads.d_scale[i];
        up.d_opacity[item] += grads.d_opacity[i];
      } else {
        can_d_mu[i] += grads.d_mu[i];
        can_d_rot[i] += grads.d_rot[i];
        can_d_scale[i] += grads.d_scale[i];
        can_d_opacity[i] += grads.d_opacity[i];
      }
      const double* drow = grads.d_payload.data() + static_cast<int64_t>(i) * P;
      for (int c = 0; c < classes; ++c)
        d_sem_rows[static_cast<int64_t>(i) * classes + c] += drow[c];
      if (rec.has_features)
        for (int c = 0; c < ca; ++c)
          d_feat_rows[static_cast<int64_t>(i) * ca + c] += drow[classes + c];
    }
    rec.fwd.pixels.clear();  // free the pair lists early
  }

  // Payload-producing heads.
  for (int i = 0; i < n; ++i) {
    VecX dx(cg);
    model.heads.sem.backward(canonical[i].feat.data(),
                             d_sem_rows.data() + static_cast<int64_t>(i) * classes, dx.data());
    d_feat[i] += dx;
  }
  if (distill_active) {
    project_student_backward(canonical, model.projectors, d_feat_rows.data(), &d_feat);
    project_teacher_backward(*teacher, model.projectors, d_teacher);
  }

  // Deformation regularizer terms.
  if (use_deform) {
    const int64_t terms = static_cast<int64_t>(offsets.size()) * n;
    const double reg_scale = cfg.loss.def * cfg.def_loss.reg * 2.0 / static_cast<double>(terms);
    for (size_t oi = 0; oi < offsets.size(); ++oi)
      for (int i = 0; i < n; ++i) {
        const size_t item = oi * n + i;
        const GaussianUpdate& u = pass.update(static_cast<int>(oi), i);
        up.d_update[item].d_mu += reg_scale * cfg.def_loss.mu * u.d_mu;
        up.d_update[item].d_rot += reg_scale * cfg.def_loss.rot * u.d_rot;
        up.d_update[item].d_scale += reg_scale * cfg.def_loss.scale * u.d_scale;
        up.d_update[item].d_opacity += reg_scale * cfg.def_loss.opacity * u.d_opacity;
      }
    const double mask_scale = cfg.loss.def * cfg.def_loss.mask / static_cast<double>(n);
    for (int i = 0; i < n; ++i) up.d_mask[i] += mask_scale * (1.0 - 2.0 * pass.masks()[i]);

    DeformationPass::CanonicalGrads cg_grads = pass.backward(up);
    for (int i = 0; i < n; ++i) {
      can_d_mu[i] += cg_grads.d_mu[i];
      can_d_rot[i] += cg_grads.d_rot[i];
      can_d_scale[i] += cg_grads.d_scale[i];
      can_d_opacity[i] += cg_grads.d_opacity[i];
      d_feat[i] += cg_grads.d_feat[i];
    }
  }

  // Canonical fields back to the raw parameter tensors.
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) model.g_mu->grad[i * 3 + a] += can_d_mu[i][a];

    Vec4 p_raw(model.g_rot->value[i * 4], model.g_rot->value[i * 4 + 1],
               model.g_rot->value[i * 4 + 2], model.g_rot->value[i * 4 + 3]);
    const double norm = p_raw.norm();
    const double sign = p_raw[0] < 0.0 ? -1.0 : 1.0;
    const Vec4 q = canonical[i].rot.coeffs();
    Vec4 dp = (sign / norm) * (can_d_rot[i] - q * q.dot(can_d_rot[i]));
    for (int a = 0; a < 4; ++a) model.g_rot->grad[i * 4 + a] += dp[a];

    for (int a = 0; a < 3; ++a)
      model.g_log_scale->grad[i * 3 + a] += canonical[i].scale[a] * can_d_scale[i][a];

    const double o = canonical[i].opacity;
    model.g_opacity->grad[i] += o * (1.0 - o) * can_d_opacity[i];

    for (int c = 0; c < cg; ++c)
      model.g_feat->grad[static_cast<int64_t>(i) * cg + c] += d_feat[i][c];
  }

  return losses;
}

// ---- evaluation --------------------------------------------------------------------

SemanticLabelGrid predict_grid(const Model& model, int offset) {
  std::vector<GaussianPrimitive> canonical = canonical_gaussians(model);
  std::vector<GaussianPrimitive> gaussians;
  if (offset == 0 || !model.cfg.deformation.enabled) {
    gaussians = std::move(canonical);
  } else {
    auto deformed = deform_set(canonical, {offset}, model.deform);
    gaussians = std::move(deformed.at(offset));
  }
  FeatureVolume volume = splat_features(gaussians, model.cfg.grid, model.cfg.splat);
  std::vector<double> p_occ = occupancy_head(volume, model.heads);
  std::vector<double> p_sem = semantic_head(volume, model.heads);
  return extract_occupancy(p_occ, p_sem, model.cfg.grid, kNumClasses,
                           model.cfg.splat.occupancy_threshold);
}

EvalResult evaluate(const Model& model, const SyntheticScene& scene, const EvalOptions& opt) {
  require(model.cfg.grid == scene.grid(), ErrorKind::SpecMismatch,
          "model grid does not match the scene grid");
  EvalResult result;
  ConfusionCounts counts;
  SemanticLabelGrid pred0;
  for (int offset : opt.offsets) {
    require(std::abs(offset) <= scene.max_offset(), ErrorKind::IndexOutOfRange,
            "eval offset outside the scene clip");
    const SemanticLabelGrid& gt = scene.gt[scene.frame_of_offset(offset)];
    SemanticLabelGrid pred = opt.gt_as_pred ? gt : predict_grid(model, offset);
    if (offset == 0) pred0 = pred;
    if (opt.visible_only) {
      std::vector<uint8_t> vis = visible_mask(gt, scene.cameras);
      counts.accumulate(confusion(pred, gt, &vis));
    } else {
      counts.accumulate(confusion(pred, gt));
    }
  }
  result.agg = aggregate(counts);
  if (opt.with_rayiou) {
    const SemanticLabelGrid& gt = scene.gt[scene.frame_of_offset(0)];
    if (pred0.labels.empty()) pred0 = opt.gt_as_pred ? gt : predict_grid(model, 0);
    std::vector<Ray> rays;
    for (const CameraModel& cam : scene.cameras) {
      std::vector<Ray> r = camera_rays(cam);
      rays.insert(rays.end(), r.begin(), r.end());
    }
    result.rayiou = ray_iou(pred0, gt, rays);
    result.has_rayiou = true;
  }
  return result;
}

// ---- training loop --------------------------------------------------------------------

TrainResult train(Model& model, const SyntheticScene& scene, const std::string& out_dir,
                  const std::string& config_json) {
  const Config& cfg = model.cfg;
  require(cfg.train.steps > 0, ErrorKind::NonPositiveSize, "training steps must be positive");
  require(model.cfg.grid == scene.grid(), ErrorKind::SpecMismatch,
          "model grid does not match the scene grid");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create output directory: " + out_dir);

  TeacherFeatureStack teacher;
  bool has_teacher = false;
  if (cfg.loss.distill > 0.0) {
    if (cfg.distill.mode == "synthetic") {
      teacher = synth_teacher(scene, cfg.distill.patch_size, cfg.distill.teacher_dim, cfg.seed,
                              static_cast<uint32_t>(cfg.distill.teacher_block));
    } else if (cfg.distill.mode == "file") {
      require(!cfg.distill.teacher_path.empty(), ErrorKind::MissingFile,
              "distill.teacher_path is required in file mode");
      teacher = load_teacher_features(cfg.distill.teacher_path);
    } else {
      raise(ErrorKind::TypeError, "distill.mode must be synthetic or file");
    }
    require(teacher.channels == model.projectors.teacher_proj.in_dim(), ErrorKind::ShapeMismatch,
            "teacher channels do not match distill.teacher_dim");
    has_teacher = true;
  }

  OptimizerConfig opt_cfg = cfg.optimizer;
  if (opt_cfg.max_steps <= 0) opt_cfg.max_steps = cfg.train.steps;
  AdamW opt(opt_cfg);

  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream log(metrics_path);
  require(log.good(), ErrorKind::IoError, "cannot write " + metrics_path);
  std::ofstream eval_log;
  if (cfg.train.eval_every > 0) {
    eval_log.open((fs::path(out_dir) / "eval.csv").string());
  }

  StepLosses losses;
  for (int step = 0; step < cfg.train.steps; ++step) {
    losses = compute_step(model, scene, has_teacher ? &teacher : nullptr, true);
    const double lr = lr_at(step, opt_cfg);
    opt.step(model.store);

    const bool log_now = cfg.train.log_every > 0 &&
                         (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps);
    if (log_now) {
      char line[256];
      std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", step,
                    losses.total, losses.seg, losses.dep, losses.distill, losses.def, lr);
      log << line << "\n";
    }
    if (cfg.train.eval_every > 0 &&
        ((step + 1) % cfg.train.eval_every == 0 || step + 1 == cfg.train.steps)) {
      EvalResult ev = evaluate(model, scene, {});
      eval_log << step << "," << ev.agg.miou << "\n";
      log_info("step " + std::to_string(step) + " miou " + std::to_string(ev.agg.miou));
    }
  }
  log.flush();

  TrainResult result;
  result.final_losses = losses;
  result.param_digest = model.store.value_digest();
  result.metrics_path = metrics_path;
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.ckpt").string();
  save_checkpoint(result.checkpoint_path, model.store, static_cast<uint64_t>(cfg.train.steps),
                  config_json);
  return result;
}

}  // namespace dego
