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

#include <algorithm>

#include "dego/splatting.hpp"
#include "support.hpp"

using namespace dego;

TEST_CASE("gaussian_density closed forms") {
  std::mt19937_64 rng(3);
  GaussianPrimitive g = test::random_gaussian(rng, 2);
  CHECK(gaussian_density(g, g.mu, 3.0) == doctest::Approx(g.opacity).epsilon(1e-12));

  GaussianPrimitive iso;
  iso.feat = VecX::Zero(1);
  iso.scale = Vec3(1, 1, 1);
  iso.opacity = 1.0;
  CHECK(gaussian_density(iso, Vec3(1, 0, 0), 3.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  // Mahalanobis distance 3.01 with truncation 3 -> 0.
  CHECK(gaussian_density(iso, Vec3(3.01, 0, 0), 3.0) == 0.0);
  CHECK(gaussian_density(iso, Vec3(2.99, 0, 0), 3.0) > 0.0);
}

TEST_CASE("single gaussian centered on a voxel center") {
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(2, 2, 1), 0.5);
  GaussianPrimitive g;
  g.mu = spec.voxel_center(1, 1, 0);
  g.scale = Vec3(0.3, 0.3, 0.3);
  g.opacity = 0.7;
  g.feat = VecX::Zero(3);
  g.feat << 1.0, -2.0, 0.5;
  SplatConfig cfg;
  FeatureVolume vol = splat_features({g}, spec, cfg);
  int64_t flat = spec.flat_index(1, 1, 0);
  CHECK(vol.weight[flat] == doctest::Approx(0.7).epsilon(1e-12));
  for (int c = 0; c < 3; ++c)
    CHECK(vol.voxel_data(flat)[c] ==
          doctest::Approx(g.feat[c] * 0.7 / (0.7 + cfg.weight_epsilon)).epsilon(1e-9));
}

TEST_CASE("empty gaussian set gives an all-zero volume") {
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(1, 1, 1), 0.5);
  FeatureVolume vol = splat_features({}, spec, SplatConfig{});
  CHECK(std::all_of(vol.weight.begin(), vol.weight.end(), [](double w) { return w == 0.0; }));
}

TEST_CASE("splat matches the exhaustive double-loop oracle") {
  std::mt19937_64 rng(41);
  VoxelGridSpec spec = make_grid_spec(Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5), 0.5);
  REQUIRE(spec.dims == Eigen::Vector3i(4, 4, 2));
  SplatConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<GaussianPrimitive> gs;
    for (int i = 0; i < 5; ++i)
      gs.push_back(test::random_gaussian(rng, 4, Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5)));
    FeatureVolume ours = splat_features(gs, spec, cfg);
    FeatureVolume oracle = test::splat_oracle(gs, spec, cfg);
    for (size_t i = 0; i < ours.data.size(); ++i)
      CHECK(ours.data[i] == doctest::Approx(oracle.data[i]).epsilon(1e-6));
    for (size_t i = 0; i < ours.weight.size(); ++i)
      CHECK(ours.weight[i] == doctest::Approx(oracle.weight[i]).epsilon(1e-6));
  }
}

TEST_CASE("splat is permutation invariant within tolerance") {
  std::mt19937_64 rng(77);
  VoxelGridSpec spec = make_grid_spec(Vec3(-2, -2, 0), Vec3(2, 2, 2), 0.5);
  std::vector<GaussianPrimitive> gs;
  for (int i = 0; i < 8; ++i) gs.push_back(test::random_gaussian(rng, 3, spec.min_corner, spec.max_corner));
  FeatureVolume a = splat_features(gs, spec, SplatConfig{});
  std::reverse(gs.begin(), gs.end());
  FeatureVolume b = splat_features(gs, spec, SplatConfig{});
  for (size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
}

TEST_CASE("voxel features are near-convex combinations of contributing feats") {
  std::mt19937_64 rng(5);
  VoxelGridSpec spec = make_grid_spec(Vec3(-2, -2, 0), Vec3(2, 2, 2), 0.5);
  std::vector<GaussianPrimitive> gs;
  for (int i = 0; i < 6; ++i) gs.push_back(test::random_gaussian(rng, 2, spec.min_corner, spec.max_corner));
  double lo = 1e300, hi = -1e300;
  for (const auto& g : gs) {
    lo = std::min({lo, g.feat[0], g.feat[1]});
    hi = std::max({hi, g.feat[0], g.feat[1]});
  }
  FeatureVolume vol = splat_features(gs, spec, SplatConfig{});
  for (size_t i = 0; i < vol.data.size(); ++i) {
    CHECK(vol.data[i] >= std::min(0.0, lo) - 1e-9);
    CHECK(vol.data[i] <= std::max(0.0, hi) + 1e-9);
  }
}

TEST_CASE("splat gradients match finite differences") {
  std::mt19937_64 rng(101);
  VoxelGridSpec spec = make_grid_spec(Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5), 0.5);
  SplatConfig cfg;
  cfg.truncation_sigma = 12.0;  // keep every pair away from the hard cutoff
  std::vector<GaussianPrimitive> gs;
  for (int i = 0; i < 3; ++i)
    gs.push_back(test::random_gaussian(rng, 3, Vec3(-0.8, -0.8, -0.3), Vec3(0.8, 0.8, 0.3)));

  std::vector<double> cd(spec.voxel_count() * 3), cw(spec.voxel_count());
  for (auto& v : cd) v = uniform_range(rng, -1, 1);
  for (auto& v : cw) v = uniform_range(rng, -1, 1);

  auto loss = [&]() {
    FeatureVolume vol = splat_features(gs, spec, cfg);
    double L = 0.0;
    for (size_t i = 0; i < vol.data.size(); ++i) L += cd[i] * vol.data[i];
    for (size_t i = 0; i < vol.weight.size(); ++i) L += cw[i] * vol.weight[i];
    return L;
  };

  FeatureVolume vol = splat_features(gs, spec, cfg);
  SplatGrads grads = splat_features_backward(gs, spec, cfg, vol, cd.data(), cw.data());

  for (size_t i = 0; i < gs.size(); ++i) {
    INFO("gaussian ", i);
    CHECK(test::finite_difference_error(loss, gs[i].mu.data(), 3, grads.d_mu[i].data()) < 1e-4);
    CHECK(test::finite_difference_error(loss, &gs[i].rot.w, 1, &grads.d_rot[i][0]) < 1e-4);
    CHECK(test::finite_difference_error(loss, &gs[i].rot.x, 1, &grads.d_rot[i][1]) < 1e-4);
    CHECK(test::finite_difference_error(loss, gs[i].scale.data(), 3, grads.d_scale[i].data()) <
          1e-4);
    CHECK(test::finite_difference_error(loss, &gs[i].opacity, 1, &grads.d_opacity[i]) < 1e-4);
    CHECK(test::finite_difference_error(loss, gs[i].feat.data(), 3, grads.d_feat[i].data()) < 1e-4);
  }
}

TEST_CASE("occupancy head closed forms and oracle") {
  std::mt19937_64 rng(11);
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(1, 1, 0.5), 0.5);
  FeatureVolume vol(spec, 4);
  ParamStore store;
  PredictionHeads heads = make_prediction_heads(store, "heads", 4, kNumClasses, rng);

  init_linear_zero(heads.occ);
  std::vector<double> p = occupancy_head(vol, heads);
  for (double v : p) CHECK(v == 0.5);

  // w.f = ln 3 at one voxel -> 0.75
  heads.occ.W->value[0] = 1.0;
  vol.voxel_data(0)[0] = std::log(3.0);
  p = occupancy_head(vol, heads);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p[1] == 0.5);

  for (auto& v : vol.data) v = uniform_range(rng, -1, 1);
  for (auto& v : heads.occ.W->value) v = uniform_range(rng, -1, 1);
  heads.occ.b->value[0] = 0.3;
  p = occupancy_head(vol, heads);
  for (int64_t vx = 0; vx < spec.voxel_count(); ++vx) {
    double z = heads.occ.b->value[0];
    for (int c = 0; c < 4; ++c) z += heads.occ.W->value[c] * vol.voxel_data(vx)[c];
    CHECK(p[vx] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
    CHECK(p[vx] > 0.0);
    CHECK(p[vx] < 1.0);
  }
}

TEST_CASE("semantic head uniform, saturated, and stable-softmax oracle") {
  std::mt19937_64 rng(13);
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(1, 1, 0.5), 0.5);
  FeatureVolume vol(spec, 3);
  ParamStore store;
  PredictionHeads heads = make_prediction_heads(store, "heads", 3, kNumClasses, rng);

  init_linear_zero(heads.sem);
  std::vector<double> p = semantic_head(vol, heads);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 15).epsilon(1e-12));

  heads.sem.b->value[3] = 20.0;
  p = semantic_head(vol, heads);
  CHECK(p[3] > 1.0 - 1e-6);

  for (auto& v : heads.sem.b->value) v = uniform_range(rng, -2, 2);
  for (auto& v : heads.sem.W->value) v = uniform_range(rng, -2, 2);
  for (auto& v : vol.data) v = uniform_range(rng, -1, 1);
  p = semantic_head(vol, heads);
  for (int64_t vx = 0; vx < spec.voxel_count(); ++vx) {
    std::vector<double> logits(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      logits[c] = heads.sem.b->value[c];
      for (int i = 0; i < 3; ++i)
        logits[c] += heads.sem.W->value[c * 3 + i] * vol.voxel_data(vx)[i];
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double l : logits) sum += std::exp(l - mx);
    double row_sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      CHECK(p[vx * kNumClasses + c] ==
            doctest::Approx(std::exp(logits[c] - mx) / sum).epsilon(1e-12));
      row_sum += p[vx * kNumClasses + c];
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("head gradients match finite differences") {
  std::mt19937_64 rng(17);
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(1, 1, 0.5), 0.5);
  FeatureVolume vol(spec, 3);
  for (auto& v : vol.data) v = uniform_range(rng, -1, 1);
  ParamStore store;
  PredictionHeads heads = make_prediction_heads(store, "heads", 3, kNumClasses, rng);
  for (auto& v : heads.occ.b->value) v = uniform_range(rng, -1, 1);
  for (auto& v : heads.sem.b->value) v = uniform_range(rng, -1, 1);

  std::vector<double> co(spec.voxel_count()), cs(spec.voxel_count() * kNumClasses);
  for (auto& v : co) v = uniform_range(rng, -1, 1);
  for (auto& v : cs) v = uniform_range(rng, -1, 1);

  auto loss = [&]() {
    std::vector<double> po = occupancy_head(vol, heads);
    std::vector<double> ps = semantic_head(vol, heads);
    double L = 0.0;
    for (size_t i = 0; i < po.size(); ++i) L += co[i] * po[i];
    for (size_t i = 0; i < ps.size(); ++i) L += cs[i] * ps[i];
    return L;
  };

  store.zero_grad();
  std::vector<double> d_vol(vol.data.size(), 0.0);
  std::vector<double> po = occupancy_head(vol, heads);
  std::vector<double> ps = semantic_head(vol, heads);
  occupancy_head_backward(vol, heads, po, co.data(), d_vol.data());
  semantic_head_backward(vol, heads, ps, cs.data(), d_vol.data());

  for (Tensor* t : store.all()) {
    INFO("tensor ", t->name);
    CHECK(test::finite_difference_error(loss, t->value.data(), static_cast<int>(t->value.size()),
                                        t->grad.data()) < 1e-4);
  }
  CHECK(test::finite_difference_error(loss, vol.data.data(), static_cast<int>(vol.data.size()),
                                      d_vol.data()) < 1e-4);
}

TEST_CASE("extract_occupancy threshold, argmax, tie break") {
  VoxelGridSpec spec = make_grid_spec(Vec3(0, 0, 0), Vec3(1, 1, 0.5), 0.5);
  const int64_t count = spec.voxel_count();
  std::vector<double> p_occ(count, 0.0);
  std::vector<double> p_sem(count * kNumClasses, 1.0 / kNumClasses);

  SemanticLabelGrid grid = extract_occupancy(p_occ, p_sem, spec, kNumClasses, 0.5);
  for (uint8_t v : grid.labels) CHECK(v == kFreeLabel);

  p_occ[2] = 1.0;
  for (int c = 0; c < kNumClasses; ++c) p_sem[2 * kNumClasses + c] = c == 3 ? 0.9 : 0.1 / 14;
  grid = extract_occupancy(p_occ, p_sem, spec, kNumClasses, 0.5);
  CHECK(grid.labels[2] == 3);
  CHECK(grid.labels[0] == kFreeLabel);

  // Exact tie between classes 2 and 7 breaks to 2.
  p_occ[1] = 0.9;
  for (int c = 0; c < kNumClasses; ++c) p_sem[1 * kNumClasses + c] = 0.0;
  p_sem[1 * kNumClasses + 2] = 0.5;
  p_sem[1 * kNumClasses + 7] = 0.5;
  grid = extract_occupancy(p_occ, p_sem, spec, kNumClasses, 0.5);
  CHECK(grid.labels[1] == 2);

  std::vector<double> wrong(count - 1);
  CHECK_THROWS_AS(extract_occupancy(wrong, p_sem, spec, kNumClasses, 0.5), Error);
}
