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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dego/deformation.hpp"
#include "support.hpp"

using namespace dego;

namespace {

struct Fixture {
  ParamStore store;
  EncodingConfig enc;
  DeformationNetwork net;
  std::mt19937_64 rng{17};

  explicit Fixture(int cg = 6, int dh = 8, int depth = 3) {
    enc.position_levels = 2;
    enc.time_levels = 2;
    enc.time_embed_dim = 5;
    net = make_deformation_network(store, "deform", enc, cg, dh, depth, DeformationHeadFlags{},
                                   rng);
  }

  void randomize_heads() {
    auto fill = [&](Linear& l) {
      for (auto& v : l.W->value) v = uniform_range(rng, -0.3, 0.3);
      for (auto& v : l.b->value) v = uniform_range(rng, -0.1, 0.1);
    };
    fill(net.head_rigid_mu);
    fill(net.head_def_mu);
    fill(net.head_def_rot);
    fill(net.head_def_scale);
    fill(net.head_def_opacity);
    fill(net.head_mask);
  }

  std::vector<GaussianPrimitive> gaussians(int n) {
    std::vector<GaussianPrimitive> out;
    for (int i = 0; i < n; ++i) out.push_back(test::random_gaussian(rng, net.feature_dim));
    return out;
  }
};

}  // namespace

TEST_CASE("zero-initialized mask head yields 0.5; bias saturates") {
  Fixture f;
  auto gs = f.gaussians(3);
  for (const auto& g : gs) {
    VecX gp = encode_position(g.mu, f.enc.position_levels);
    CHECK(predict_rigidity_mask(g.feat, gp, f.net) == 0.5);
  }
  f.net.head_mask.b->value[0] = 20.0;
  VecX gp = encode_position(gs[0].mu, f.enc.position_levels);
  CHECK(predict_rigidity_mask(gs[0].feat, gp, f.net) > 1.0 - 1e-8);
}

TEST_CASE("rigidity mask matches a sigmoid(linear) oracle") {
  Fixture f;
  f.randomize_heads();
  auto g = f.gaussians(1)[0];
  VecX gp = encode_position(g.mu, f.enc.position_levels);
  double m = predict_rigidity_mask(g.feat, gp, f.net);

  double z = f.net.head_mask.b->value[0];
  for (int i = 0; i < g.feat.size(); ++i) z += f.net.head_mask.W->value[i] * g.feat[i];
  for (int i = 0; i < gp.size(); ++i)
    z += f.net.head_mask.W->value[g.feat.size() + i] * gp[i];
  CHECK(m == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
}

TEST_CASE("rigid branch moves position only") {
  Fixture f;
  VecX h = VecX::Zero(f.net.hidden_dim());
  GaussianUpdate upd = predict_rigid_offset(h, f.net);
  CHECK(upd.d_mu.norm() == 0.0);  // zero-initialized head

  f.randomize_heads();
  for (int i = 0; i < h.size(); ++i) h[i] = uniform_range(f.rng, -1, 1);
  upd = predict_rigid_offset(h, f.net);
  CHECK(upd.d_rot.norm() == 0.0);
  CHECK(upd.d_scale.norm() == 0.0);
  CHECK(upd.d_opacity == 0.0);
  Vec3 oracle = Vec3::Zero();
  for (int o = 0; o < 3; ++o) {
    oracle[o] = f.net.head_rigid_mu.b->value[o];
    for (int i = 0; i < h.size(); ++i)
      oracle[o] += f.net.head_rigid_mu.W->value[o * h.size() + i] * h[i];
  }
  CHECK((upd.d_mu - oracle).norm() < 1e-12);
}

TEST_CASE("nonrigid heads honor the ablation flags") {
  Fixture f;
  f.randomize_heads();
  f.net.enabled.rotation = false;
  VecX h(f.net.hidden_dim());
  for (int i = 0; i < h.size(); ++i) h[i] = uniform_range(f.rng, -1, 1);
  GaussianUpdate upd = predict_nonrigid_delta(h, f.net);
  CHECK(upd.d_rot.norm() == 0.0);
  CHECK(upd.d_scale.norm() > 0.0);
}

TEST_CASE("compose_update blends and gates") {
  GaussianUpdate rig, def;
  rig.d_mu = Vec3(1, 0, 0);
  def.d_mu = Vec3(0, 1, 0);
  def.d_rot = Vec4(0.1, 0.2, 0.3, 0.4);
  def.d_scale = Vec3(0.5, 0.6, 0.7);
  def.d_opacity = 0.8;

  GaussianUpdate at0 = compose_update(0.0, rig, def);
  CHECK(at0.d_mu == rig.d_mu);
  CHECK(at0.d_rot.norm() == 0.0);

  GaussianUpdate at1 = compose_update(1.0, rig, def);
  CHECK(at1.d_mu == def.d_mu);
  CHECK(at1.d_rot == def.d_rot);
  CHECK(at1.d_opacity == def.d_opacity);

  GaussianUpdate mid = compose_update(0.5, rig, def);
  CHECK((mid.d_mu - Vec3(0.5, 0.5, 0)).norm() == 0.0);
  CHECK((mid.d_rot - 0.5 * def.d_rot).norm() == 0.0);

  // Below the gate the nonrigid share of rot/scale/opacity is hard zero.
  GaussianUpdate low = compose_update(0.05, rig, def);
  CHECK(low.d_rot.norm() == 0.0);
  CHECK(low.d_scale.norm() == 0.0);
  CHECK(low.d_opacity == 0.0);
  CHECK((low.d_mu - (0.95 * rig.d_mu + 0.05 * def.d_mu)).norm() < 1e-15);
}

TEST_CASE("compose_update is linear in (rig, def) for fixed m") {
  std::mt19937_64 rng(9);
  auto random_update = [&]() {
    GaussianUpdate u;
    for (int a = 0; a < 3; ++a) u.d_mu[a] = uniform_range(rng, -1, 1);
    for (int a = 0; a < 4; ++a) u.d_rot[a] = uniform_range(rng, -1, 1);
    for (int a = 0; a < 3; ++a) u.d_scale[a] = uniform_range(rng, -1, 1);
    u.d_opacity = uniform_range(rng, -1, 1);
    return u;
  };
  for (double m : {0.05, 0.3, 0.8}) {
    GaussianUpdate a = random_update(), b = random_update(), c = random_update(),
                   d = random_update();
    GaussianUpdate ab, cd;
    ab.d_mu = a.d_mu + b.d_mu;
    ab.d_rot = a.d_rot + b.d_rot;
    ab.d_scale = a.d_scale + b.d_scale;
    ab.d_opacity = a.d_opacity + b.d_opacity;
    cd.d_mu = c.d_mu + d.d_mu;
    cd.d_rot = c.d_rot + d.d_rot;
    cd.d_scale = c.d_scale + d.d_scale;
    cd.d_opacity = c.d_opacity + d.d_opacity;
    GaussianUpdate lhs = compose_update(m, ab, cd);
    GaussianUpdate r1 = compose_update(m, a, c);
    GaussianUpdate r2 = compose_update(m, b, d);
    CHECK((lhs.d_mu - (r1.d_mu + r2.d_mu)).norm() < 1e-12);
    CHECK((lhs.d_rot - (r1.d_rot + r2.d_rot)).norm() < 1e-12);
    CHECK((lhs.d_scale - (r1.d_scale + r2.d_scale)).norm() < 1e-12);
    CHECK(lhs.d_opacity == doctest::Approx(r1.d_opacity + r2.d_opacity).epsilon(1e-12));
  }
}

TEST_CASE("apply_update semantics") {
  std::mt19937_64 rng(13);
  GaussianPrimitive g = test::random_gaussian(rng, 4);
  g.opacity = 0.3;

  GaussianUpdate zero;
  GaussianPrimitive same = apply_update(g, zero);
  CHECK(same.mu == g.mu);
  CHECK(std::abs(same.opacity - 0.3) < 1e-9);
  CHECK((same.scale - g.scale).norm() < 1e-9);

  GaussianUpdate ds;
  ds.d_scale = Vec3(std::log(2.0), 0, 0);
  GaussianPrimitive scaled = apply_update(GaussianPrimitive{Vec3::Zero(), Quat::identity(),
                                                            Vec3(1, 1, 1), 0.5, VecX::Zero(2), 0.5},
                                          ds);
  CHECK(scaled.scale[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(scaled.scale[1] == doctest::Approx(1.0).epsilon(1e-12));

  GaussianUpdate bad;
  bad.d_rot = Vec4(-g.rot.w, -g.rot.x, -g.rot.y, -g.rot.z);
  CHECK_THROWS_AS(apply_update(g, bad), Error);
}

TEST_CASE("deform_set with zero-initialized heads is the identity") {
  Fixture f;
  auto gs = f.gaussians(5);
  auto frames = deform_set(gs, {-3, 0, 2}, f.net);
  for (const auto& [offset, frame] : frames) {
    for (size_t i = 0; i < gs.size(); ++i) {
      CHECK(frame[i].mu == gs[i].mu);  // bitwise
      CHECK(std::abs(frame[i].rot.w - gs[i].rot.w) < 1e-15);
      CHECK((frame[i].scale - gs[i].scale).norm() < 1e-9);
      CHECK(std::abs(frame[i].opacity - gs[i].opacity) < 1e-9);
    }
  }
  // Frames equal each other bitwise (matching render reproducibility).
  for (size_t i = 0; i < gs.size(); ++i) {
    CHECK(frames.at(-3)[i].scale == frames.at(2)[i].scale);
    CHECK(frames.at(-3)[i].opacity == frames.at(2)[i].opacity);
  }
}

TEST_CASE("deform_set equals the manual five-op chain") {
  Fixture f;
  f.randomize_heads();
  std::mt19937_64 rng(99);
  init_mlp_uniform(f.net.featurenet.mlp, rng);
  init_mlp_uniform(f.net.time_projector.mlp, rng);
  auto gs = f.gaussians(1);
  const int offset = 3;
  auto frames = deform_set(gs, {offset}, f.net);

  VecX gp = encode_position(gs[0].mu, f.enc.position_levels);
  VecX gt = encode_time(offset, f.enc.time_levels);
  VecX et = embed_time(gt, f.net.time_projector);
  VecX h = build_hidden(gs[0].feat, gp, et, f.net.featurenet);
  double m = predict_rigidity_mask(gs[0].feat, gp, f.net);
  GaussianUpdate rig = predict_rigid_offset(h, f.net);
  GaussianUpdate def = predict_nonrigid_delta(h, f.net);
  GaussianPrimitive expected = apply_update(gs[0], compose_update(m, rig, def));

  const GaussianPrimitive& got = frames.at(offset)[0];
  CHECK((got.mu - expected.mu).norm() < 1e-12);
  CHECK(std::abs(got.rot.w - expected.rot.w) < 1e-12);
  CHECK((got.scale - expected.scale).norm() < 1e-12);
  CHECK(std::abs(got.opacity - expected.opacity) < 1e-12);
  CHECK(got.mask == doctest::Approx(m).epsilon(1e-12));
}

TEST_CASE("mask forced to zero keeps rot/scale/opacity rigid across offsets") {
  Fixture f;
  f.randomize_heads();
  std::mt19937_64 rng(7);
  init_mlp_uniform(f.net.featurenet.mlp, rng);
  init_mlp_uniform(f.net.time_projector.mlp, rng);
  f.net.head_mask.b->value[0] = -40.0;  // sigmoid -> ~0
  std::fill(f.net.head_mask.W->value.begin(), f.net.head_mask.W->value.end(), 0.0);

  auto gs = f.gaussians(4);
  auto frames = deform_set(gs, {-2, 1, 4}, f.net);
  for (size_t i = 0; i < gs.size(); ++i) {
    const auto& a = frames.at(-2)[i];
    const auto& b = frames.at(1)[i];
    const auto& c = frames.at(4)[i];
    CHECK(std::abs(a.rot.w - b.rot.w) < 1e-9);
    CHECK(std::abs(a.rot.x - c.rot.x) < 1e-9);
    CHECK((a.scale - b.scale).norm() < 1e-9);
    CHECK((a.scale - c.scale).norm() < 1e-9);
    CHECK(std::abs(a.opacity - b.opacity) < 1e-9);
  }
  // Positions may still move through the rigid offsets.
}

TEST_CASE("deformation_loss closed-form cases") {
  DeformationLossWeights w;
  w.reg = 1.0;
  w.mask = 0.0;
  std::vector<std::vector<GaussianUpdate>> updates(1, std::vector<GaussianUpdate>(1));
  updates[0][0].d_mu = Vec3(1, 0, 0);
  CHECK(deformation_loss(updates, {0.0}, w) == doctest::Approx(1.0));

  updates[0][0] = GaussianUpdate{};
  CHECK(deformation_loss(updates, {0.0, 1.0}, w) == 0.0);

  w.reg = 0.0;
  w.mask = 1.0;
  CHECK(deformation_loss(updates, {0.5, 0.5}, w) == doctest::Approx(0.25));
}

TEST_CASE("deformation_loss is nonnegative and zero only when binary and still") {
  std::mt19937_64 rng(31);
  DeformationLossWeights w;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<GaussianUpdate>> updates(2, std::vector<GaussianUpdate>(3));
    std::vector<double> masks(3);
    for (auto& frame : updates)
      for (auto& u : frame) {
        for (int a = 0; a < 3; ++a) u.d_mu[a] = uniform_range(rng, -1, 1);
        u.d_opacity = uniform_range(rng, -1, 1);
      }
    for (auto& m : masks) m = uniform_range(rng, 0, 1);
    CHECK(deformation_loss(updates, masks, w) >= 0.0);
  }
  std::vector<std::vector<GaussianUpdate>> still(2, std::vector<GaussianUpdate>(3));
  CHECK(deformation_loss(still, {0.0, 1.0, 1.0}, w) == 0.0);
  CHECK(deformation_loss(still, {0.5, 1.0, 1.0}, w) > 0.0);
}

TEST_CASE("mask loss gradient descent binarizes from off-center starts") {
  for (double m0 : {0.1, 0.3, 0.7, 0.9}) {
    double m = m0;
    const double target = m0 < 0.5 ? 0.0 : 1.0;
    double prev_dist = std::abs(m - target);
    int steps = 0;
    while (m * (1.0 - m) >= 1e-3 && steps < 500) {
      m -= 0.1 * (1.0 - 2.0 * m);  // projected gradient descent on m(1-m)
      m = std::min(1.0, std::max(0.0, m));
      double dist = std::abs(m - target);
      CHECK(dist <= prev_dist + 1e-12);  // monotone toward the nearer endpoint
      prev_dist = dist;
      ++steps;
    }
    CHECK(steps < 500);
    CHECK(m * (1.0 - m) < 1e-3);
  }
}

TEST_CASE("deformation gradients match finite differences on N=8") {
  Fixture f(5, 8, 3);
  f.randomize_heads();
  std::mt19937_64 rng(123);
  init_mlp_uniform(f.net.featurenet.mlp, rng);
  init_mlp_uniform(f.net.time_projector.mlp, rng);
  auto gs = f.gaussians(8);
  const std::vector<int> offsets = {-2, 0, 3};
  DeformationLossWeights w;
  w.reg = 0.01;
  w.mask = 0.02;

  // Random linear functional over the deformed fields plus the loss.
  std::vector<double> coef;
  for (size_t k = 0; k < offsets.size() * gs.size() * 11; ++k)
    coef.push_back(uniform_range(rng, -1, 1));

  auto loss = [&]() {
    DeformationPass pass(f.net, gs, offsets);
    pass.forward();
    double L = 0.0;
    size_t c = 0;
    for (size_t oi = 0; oi < offsets.size(); ++oi)
      for (size_t i = 0; i < gs.size(); ++i) {
        const GaussianPrimitive& g = pass.deformed(static_cast<int>(oi), static_cast<int>(i));
        for (int a = 0; a < 3; ++a) L += coef[c++] * g.mu[a];
        L += coef[c++] * g.rot.w;
        L += coef[c++] * g.rot.x;
        L += coef[c++] * g.rot.y;
        L += coef[c++] * g.rot.z;
        for (int a = 0; a < 3; ++a) L += coef[c++] * g.scale[a];
        L += coef[c++] * g.opacity;
      }
    L += deformation_loss(pass.updates_per_offset(), pass.masks(), w);
    return L;
  };

  // Analytic gradients through the retained pass.
  f.store.zero_grad();
  DeformationPass pass(f.net, gs, offsets);
  pass.forward();
  DeformationPass::Upstream up;
  const size_t items = offsets.size() * gs.size();
  up.d_mu.assign(items, Vec3::Zero());
  up.d_rot.assign(items, Vec4::Zero());
  up.d_scale.assign(items, Vec3::Zero());
  up.d_opacity.assign(items, 0.0);
  up.d_update.assign(items, GaussianUpdate{});
  up.d_mask.assign(gs.size(), 0.0);
  {
    size_t c = 0;
    for (size_t item = 0; item < items; ++item) {
      for (int a = 0; a < 3; ++a) up.d_mu[item][a] = coef[c++];
      for (int a = 0; a < 4; ++a) up.d_rot[item][a] = coef[c++];
      for (int a = 0; a < 3; ++a) up.d_scale[item][a] = coef[c++];
      up.d_opacity[item] = coef[c++];
    }
  }
  const double terms = static_cast<double>(items);
  for (size_t oi = 0; oi < offsets.size(); ++oi)
    for (size_t i = 0; i < gs.size(); ++i) {
      const GaussianUpdate& u = pass.update(static_cast<int>(oi), static_cast<int>(i));
      GaussianUpdate& d = up.d_update[oi * gs.size() + i];
      d.d_mu += w.reg * 2.0 * w.mu * u.d_mu / terms;
      d.d_rot += w.reg * 2.0 * w.rot * u.d_rot / terms;
      d.d_scale += w.reg * 2.0 * w.scale * u.d_scale / terms;
      d.d_opacity += w.reg * 2.0 * w.opacity * u.d_opacity / terms;
    }
  for (size_t i = 0; i < gs.size(); ++i)
    up.d_mask[i] += w.mask * (1.0 - 2.0 * pass.masks()[i]) / static_cast<double>(gs.size());
  pass.backward(up);

  for (Tensor* tensor : f.store.all()) {
    double err = test::finite_difference_error(loss, tensor->value.data(),
                                               static_cast<int>(tensor->value.size()),
                                               tensor->grad.data());
    INFO("tensor ", tensor->name);
    CHECK(err < 1e-4);
  }
}
