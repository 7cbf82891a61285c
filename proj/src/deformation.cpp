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
#include "dego/deformation.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dego {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kOpacityClamp = 1e-6;

}  // namespace

DeformationNetwork make_deformation_network(ParamStore& store, const std::string& prefix,
                                            const EncodingConfig& enc, int feature_dim,
                                            int hidden_dim, int depth,
                                            const DeformationHeadFlags& flags,
                                            std::mt19937_64& rng) {
  DeformationNetwork net;
  net.enc = enc;
  net.feature_dim = feature_dim;
  net.enabled = flags;
  net.featurenet = make_feature_net(store, prefix + "/featurenet", feature_dim, enc, hidden_dim, depth);
  net.time_projector = make_time_projector(store, prefix + "/time_proj", enc);
  init_mlp_uniform(net.featurenet.mlp, rng);
  init_mlp_uniform(net.time_projector.mlp, rng);
  net.head_rigid_mu = make_linear(store, prefix + "/head_rigid_mu", hidden_dim, 3);
  net.head_def_mu = make_linear(store, prefix + "/head_def_mu", hidden_dim, 3);
  net.head_def_rot = make_linear(store, prefix + "/head_def_rot", hidden_dim, 4);
  net.head_def_scale = make_linear(store, prefix + "/head_def_scale", hidden_dim, 3);
  net.head_def_opacity = make_linear(store, prefix + "/head_def_opacity", hidden_dim, 1);
  net.head_mask = make_linear(store, prefix + "/head_mask", net.mask_input_dim(), 1);
  // Heads start at zero so every deformed frame equals the canonical frame.
  init_linear_zero(net.head_rigid_mu);
  init_linear_zero(net.head_def_mu);
  init_linear_zero(net.head_def_rot);
  init_linear_zero(net.head_def_scale);
  init_linear_zero(net.head_def_opacity);
  init_linear_zero(net.head_mask);
  return net;
}

double predict_rigidity_mask(const VecX& feat, const VecX& gamma_p, const DeformationNetwork& net) {
  require(feat.size() + gamma_p.size() == net.head_mask.in_dim(), ErrorKind::ShapeMismatch,
          "mask head input width mismatch");
  VecX x(net.head_mask.in_dim());
  x << feat, gamma_p;
  double z;
  net.head_mask.forward(x.data(), &z);
  return sigmoid(z);
}

GaussianUpdate predict_rigid_offset(const VecX& h, const DeformationNetwork& net) {
  require(h.size() == net.hidden_dim(), ErrorKind::ShapeMismatch, "hidden width mismatch");
  GaussianUpdate upd;
  net.head_rigid_mu.forward(h.data(), upd.d_mu.data());
  return upd;
}

GaussianUpdate predict_nonrigid_delta(const VecX& h, const DeformationNetwork& net) {
  require(h.size() == net.hidden_dim(), ErrorKind::ShapeMismatch, "hidden width mismatch");
  GaussianUpdate upd;
  net.head_def_mu.forward(h.data(), upd.d_mu.data());
  if (net.enabled.rotation) net.head_def_rot.forward(h.data(), upd.d_rot.data());
  if (net.enabled.scale) net.head_def_scale.forward(h.data(), upd.d_scale.data());
  if (net.enabled.opacity) net.head_def_opacity.forward(h.data(), &upd.d_opacity);
  return upd;
}

GaussianUpdate compose_update(double m, const GaussianUpdate& rig, const GaussianUpdate& def) {
  GaussianUpdate out;
  out.d_mu = (1.0 - m) * rig.d_mu + m * def.d_mu;
  // Below the gate the nonrigid share of shape/appearance is hard zero, which
  // makes low-mask Gaussians exactly rigid rather than approximately so.
  double mg = m < kRigidMaskGate ? 0.0 : m;
  out.d_rot = (1.0 - m) * rig.d_rot + mg * def.d_rot;
  out.d_scale = (1.0 - m) * rig.d_scale + mg * def.d_scale;
  out.d_opacity = (1.0 - m) * rig.d_opacity + mg * def.d_opacity;
  return out;
}

GaussianPrimitive apply_update(const GaussianPrimitive& g, const GaussianUpdate& upd) {
  GaussianPrimitive out = g;
  out.mu = g.mu + upd.d_mu;
  Quat sum(g.rot.w + upd.d_rot[0], g.rot.x + upd.d_rot[1], g.rot.y + upd.d_rot[2],
           g.rot.z + upd.d_rot[3]);
  out.rot = normalize_quaternion(sum);
  for (int k = 0; k < 3; ++k) out.scale[k] = std::exp(std::log(g.scale[k]) + upd.d_scale[k]);
  double clamped = std::min(1.0 - kOpacityClamp, std::max(kOpacityClamp, g.opacity));
  out.opacity = sigmoid(logit(clamped) + upd.d_opacity);
  return out;
}

double deformation_loss(const std::vector<std::vector<GaussianUpdate>>& updates_per_offset,
                        const std::vector<double>& masks, const DeformationLossWeights& weights) {
  double reg = 0.0;
  int64_t terms = 0;
  for (const auto& frame : updates_per_offset) {
    for (const GaussianUpdate& u : frame) {
      reg += weights.mu * u.d_mu.squaredNorm() + weights.rot * u.d_rot.squaredNorm() +
             weights.scale * u.d_scale.squaredNorm() + weights.opacity * u.d_opacity * u.d_opacity;
      ++terms;
    }
  }
  if (terms > 0) reg /= static_cast<double>(terms);
  double mask_loss = 0.0;
  for (double m : masks) mask_loss += m * (1.0 - m);
  if (!masks.empty()) mask_loss /= static_cast<double>(masks.size());
  return weights.reg * reg + weights.mask * mask_loss;
}

DeformationPass::DeformationPass(const DeformationNetwork& net,
                                 const std::vector<GaussianPrimitive>& canonical,
                                 const std::vector<int>& offsets)
    : net_(net), canonical_(canonical), offsets_(offsets), n_(static_cast<int>(canonical.size())) {
  slot_dims_ = net_.featurenet.mlp.slot_dims();
  slot_offsets_.resize(slot_dims_.size());
  int64_t acc = 0;
  for (size_t k = 0; k < slot_dims_.size(); ++k) {
    slot_offsets_[k] = acc;
    acc += slot_dims_[k];
  }
  slots_per_item_ = acc;
}

void DeformationPass::item_slots(int64_t item, std::vector<double*>& ptrs) const {
  ptrs.resize(slot_dims_.size());
  double* base = const_cast<double*>(fn_arena_.data()) + item * slots_per_item_;
  for (size_t k = 0; k < slot_dims_.size(); ++k) ptrs[k] = base + slot_offsets_[k];
}

void DeformationPass::forward() {
  const int pdim = net_.enc.position_encoding_dim();
  const int cg = net_.feature_dim;
  const int n_off = static_cast<int>(offsets_.size());
  gamma_p_.assign(static_cast<size_t>(n_) * pdim, 0.0);
  mask_pre_.assign(n_, 0.0);
  masks_.assign(n_, 1.0);
  e_t_.resize(n_off);
  time_traces_.resize(n_off);
  fn_arena_.assign(static_cast<size_t>(n_off) * n_ * slots_per_item_, 0.0);
  rig_.assign(static_cast<size_t>(n_off) * n_, GaussianUpdate{});
  def_.assign(static_cast<size_t>(n_off) * n_, GaussianUpdate{});
  composed_.assign(static_cast<size_t>(n_off) * n_, GaussianUpdate{});
  deformed_.assign(static_cast<size_t>(n_off) * n_, GaussianPrimitive{});

  for (int i = 0; i < n_; ++i) {
    require(canonical_[i].feat.size() == cg, ErrorKind::ShapeMismatch,
            "gaussian feature width does not match the deformation network");
    encode_position(canonical_[i].mu, net_.enc.position_levels, &gamma_p_[static_cast<size_t>(i) * pdim]);
  }

  // Rigidity mask: time-independent, one value per gaussian.
  std::vector<double> mask_in(net_.head_mask.in_dim());
  for (int i = 0; i < n_; ++i) {
    if (!net_.enabled.mask) {
      mask_pre_[i] = 0.0;
      masks_[i] = 1.0;  // decoupling disabled: every gaussian fully nonrigid
      continue;
    }
    std::memcpy(mask_in.data(), canonical_[i].feat.data(), sizeof(double) * cg);
    std::memcpy(mask_in.data() + cg, &gamma_p_[static_cast<size_t>(i) * pdim], sizeof(double) * pdim);
    net_.head_mask.forward(mask_in.data(), &mask_pre_[i]);
    masks_[i] = sigmoid(mask_pre_[i]);
  }

  for (int oi = 0; oi < n_off; ++oi) {
    VecX gt = encode_time(static_cast<double>(offsets_[oi]), net_.enc.time_levels);
    e_t_[oi].resize(net_.time_projector.out_dim());
    net_.time_projector.mlp.forward(gt.data(), e_t_[oi].data(), &time_traces_[oi]);
  }

  const int64_t items = static_cast<int64_t>(n_off) * n_;
  const int threads = num_threads();
  std::atomic<bool> degenerate{false};
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (int64_t item = 0; item < items; ++item) {
    const int oi = static_cast<int>(item / n_);
    const int i = static_cast<int>(item % n_);
    const GaussianPrimitive& g = canonical_[i];
    std::vector<double> x(net_.featurenet.mlp.in_dim());
    std::memcpy(x.data(), g.feat.data(), sizeof(double) * cg);
    std::memcpy(x.data() + cg, &gamma_p_[static_cast<size_t>(i) * pdim], sizeof(double) * pdim);
    std::memcpy(x.data() + cg + pdim, e_t_[oi].data(), sizeof(double) * net_.enc.time_embed_dim);
    std::vector<double*> slots;
    item_slots(item, slots);
    net_.featurenet.mlp.forward_slots(x.data(), slots.data());
    const double* h = slots.back();

    GaussianUpdate rig, def;
    net_.head_rigid_mu.forward(h, rig.d_mu.data());
    net_.head_def_mu.forward(h, def.d_mu.data());
    if (net_.enabled.rotation) net_.head_def_rot.forward(h, def.d_rot.data());
    if (net_.enabled.scale) net_.head_def_scale.forward(h, def.d_scale.data());
    if (net_.enabled.opacity) net_.head_def_opacity.forward(h, &def.d_opacity);
    rig_[item] = rig;
    def_[item] = def;
    composed_[item] = compose_update(masks_[i], rig, def);
    // Exceptions may not cross the omp region; flag and raise after the loop.
    Quat sum(g.rot.w + composed_[item].d_rot[0], g.rot.x + composed_[item].d_rot[1],
             g.rot.y + composed_[item].d_rot[2], g.rot.z + composed_[item].d_rot[3]);
    if (sum.norm() <= 1e-12) {
      degenerate.store(true);
      continue;
    }
    GaussianPrimitive out = apply_update(g, composed_[item]);
    out.mask = masks_[i];
    deformed_[item] = out;
  }
  require(!degenerate.load(), ErrorKind::DegenerateQuaternion,
          "deformation produced a vanishing quaternion");
}

std::vector<std::vector<GaussianUpdate>> DeformationPass::updates_per_offset() const {
  std::vector<std::vector<GaussianUpdate>> out(offsets_.size());
  for (size_t oi = 0; oi < offsets_.size(); ++oi)
    out[oi].assign(composed_.begin() + static_cast<int64_t>(oi) * n_,
                   composed_.begin() + static_cast<int64_t>(oi + 1) * n_);
  return out;
}

DeformationPass::CanonicalGrads DeformationPass::backward(const Upstream& up) const {
  const int pdim = net_.enc.position_encoding_dim();
  const int cg = net_.feature_dim;
  const int n_off = static_cast<int>(offsets_.size());
  const int64_t items = static_cast<int64_t>(n_off) * n_;

  CanonicalGrads grads;
  grads.d_mu.assign(n_, Vec3::Zero());
  grads.d_rot.assign(n_, Vec4::Zero());
  grads.d_scale.assign(n_, Vec3::Zero());
  grads.d_opacity.assign(n_, 0.0);
  grads.d_feat.assign(n_, VecX::Zero(cg));

  std::vector<double> d_mask(n_, 0.0);
  if (!up.d_mask.empty()) {
    require(static_cast<int>(up.d_mask.size()) == n_, ErrorKind::ShapeMismatch, "d_mask size");
    d_mask = up.d_mask;
  }
  std::vector<VecX> d_e_t(n_off, VecX::Zero(net_.enc.time_embed_dim));
  std::vector<double> d_gamma_p(static_cast<size_t>(n_) * pdim, 0.0);

  std::vector<double> dh(net_.hidden_dim());
  std::vector<double> dx(net_.featurenet.mlp.in_dim());
  std::vector<double*> slots;

  for (int64_t item = 0; item < items; ++item) {
    const int oi = static_cast<int>(item / n_);
    const int i = static_cast<int>(item % n_);
    const GaussianPrimitive& g = canonical_[i];
    const GaussianPrimitive& out = deformed_[item];
    const GaussianUpdate& upd = composed_[item];
    const double m = masks_[i];
    const bool gated = m < kRigidMaskGate;

    Vec3 d_mu_t = up.d_mu.empty() ? Vec3::Zero() : up.d_mu[item];
    Vec4 d_rot_t = up.d_rot.empty() ? Vec4::Zero() : up.d_rot[item];
    Vec3 d_scale_t = up.d_scale.empty() ? Vec3::Zero() : up.d_scale[item];
    double d_op_t = up.d_opacity.empty() ? 0.0 : up.d_opacity[item];
    GaussianUpdate d_upd = up.d_update.empty() ? GaussianUpdate{} : up.d_update[item];

    // apply_update adjoint.
    grads.d_mu[i] += d_mu_t;
    d_upd.d_mu += d_mu_t;

    if (d_rot_t != Vec4::Zero()) {
      Vec4 sum(g.rot.w + upd.d_rot[0], g.rot.x + upd.d_rot[1], g.rot.y + upd.d_rot[2],
               g.rot.z + upd.d_rot[3]);
      double n = sum.norm();
      double sign = sum[0] < 0.0 ? -1.0 : 1.0;
      Vec4 q = out.rot.coeffs();
      Vec4 d_sum = (sign / n) * (d_rot_t - q * q.dot(d_rot_t));
      grads.d_rot[i] += d_sum;
      d_upd.d_rot += d_sum;
    }

    for (int k = 0; k < 3; ++k) {
      double ds = d_scale_t[k];
      if (ds == 0.0) continue;
      grads.d_scale[i][k] += out.scale[k] / g.scale[k] * ds;
      d_upd.d_scale[k] += out.scale[k] * ds;
    }

    if (d_op_t != 0.0) {
      double common = out.opacity * (1.0 - out.opacity) * d_op_t;
      d_upd.d_opacity += common;
      if (g.opacity > kOpacityClamp && g.opacity < 1.0 - kOpacityClamp)
        grads.d_opacity[i] += common / (g.opacity * (1.0 - g.opacity));
    }

    // compose adjoint.
    const GaussianUpdate& rig = rig_[item];
    const GaussianUpdate& def = def_[item];
    GaussianUpdate d_rig, d_def;
    d_rig.d_mu = (1.0 - m) * d_upd.d_mu;
    d_def.d_mu = m * d_upd.d_mu;
    d_mask[i] += (def.d_mu - rig.d_mu).dot(d_upd.d_mu);
    if (!gated) {
      d_def.d_rot = m * d_upd.d_rot;
      d_def.d_scale = m * d_upd.d_scale;
      d_def.d_opacity = m * d_upd.d_opacity;
      d_mask[i] += def.d_rot.dot(d_upd.d_rot) + def.d_scale.dot(d_upd.d_scale) +
                   def.d_opacity * d_upd.d_opacity;
    }
    // The rigid branch leaves rot/scale/opacity untouched, so (1-m)*rig terms
    // for those components vanish identically.

    // heads adjoint.
    std::fill(dh.begin(), dh.end(), 0.0);
    item_slots(item, slots);
    const double* h = slots.back();
    net_.head_rigid_mu.backward(h, d_rig.d_mu.data(), dh.data(), true);
    net_.head_def_mu.backward(h, d_def.d_mu.data(), dh.data(), true);
    if (net_.enabled.rotation) net_.head_def_rot.backward(h, d_def.d_rot.data(), dh.data(), true);
    if (net_.enabled.scale) net_.head_def_scale.backward(h, d_def.d_scale.data(), dh.data(), true);
    if (net_.enabled.opacity)
      net_.head_def_opacity.backward(h, &d_def.d_opacity, dh.data(), true);

    net_.featurenet.mlp.backward_slots(slots.data(), dh.data(), dx.data());
    for (int k = 0; k < cg; ++k) grads.d_feat[i][k] += dx[k];
    for (int k = 0; k < pdim; ++k) d_gamma_p[static_cast<size_t>(i) * pdim + k] += dx[cg + k];
    for (int k = 0; k < net_.enc.time_embed_dim; ++k) d_e_t[oi][k] += dx[cg + pdim + k];
  }

  // mask head adjoint.
  if (net_.enabled.mask) {
    std::vector<double> mask_in(net_.head_mask.in_dim());
    std::vector<double> d_mask_in(net_.head_mask.in_dim());
    for (int i = 0; i < n_; ++i) {
      if (d_mask[i] == 0.0) continue;
      double dz = masks_[i] * (1.0 - masks_[i]) * d_mask[i];
      std::memcpy(mask_in.data(), canonical_[i].feat.data(), sizeof(double) * cg);
      std::memcpy(mask_in.data() + cg, &gamma_p_[static_cast<size_t>(i) * pdim],
                  sizeof(double) * pdim);
      net_.head_mask.backward(mask_in.data(), &dz, d_mask_in.data());
      for (int k = 0; k < cg; ++k) grads.d_feat[i][k] += d_mask_in[k];
      for (int k = 0; k < pdim; ++k)
        d_gamma_p[static_cast<size_t>(i) * pdim + k] += d_mask_in[cg + k];
    }
  }

  for (int i = 0; i < n_; ++i)
    encode_position_backward(canonical_[i].mu, net_.enc.position_levels,
                             &d_gamma_p[static_cast<size_t>(i) * pdim], grads.d_mu[i]);

  for (int oi = 0; oi < n_off; ++oi)
    net_.time_projector.mlp.backward(time_traces_[oi], d_e_t[oi].data(), nullptr);

  return grads;
}

std::map<int, std::vector<GaussianPrimitive>> deform_set(
    const std::vector<GaussianPrimitive>& gaussians, const std::vector<int>& frame_offsets,
    const DeformationNetwork& net) {
  DeformationPass pass(net, gaussians, frame_offsets);
  pass.forward();
  std::map<int, std::vector<GaussianPrimitive>> out;
  for (size_t oi = 0; oi < frame_offsets.size(); ++oi) {
    std::vector<GaussianPrimitive> frame(gaussians.size());
    for (int i = 0; i < pass.count(); ++i) frame[i] = pass.deformed(static_cast<int>(oi), i);
    out[frame_offsets[oi]] = std::move(frame);
  }
  return out;
}

}  // namespace dego
