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

#include <fstream>

#include "dego/checkpoint.hpp"
#include "dego/config.hpp"
#include "dego/objective.hpp"
#include "support.hpp"

using namespace dego;

namespace {

SceneRecipe tiny_recipe() {
  SceneRecipe recipe;
  recipe.grid = make_grid_spec(Vec3(-1, -1, 0), Vec3(1, 1, 1), 0.5);
  recipe.frames = 7;
  recipe.rig.count = 2;
  recipe.rig.width = 8;
  recipe.rig.height = 8;
  recipe.rig.fov_deg = 75.0;

  SceneObject ground;
  ground.class_id = 10;
  ground.shape = {ShapeSpec::Kind::Box, Vec3(0, 0, 0.125), Vec3(0.9, 0.9, 0.125)};
  recipe.statics.push_back(ground);

  SceneObject walker;
  walker.class_id = 2;
  walker.shape = {ShapeSpec::Kind::Cylinder, Vec3(0, 0, 0.55), Vec3(0.3, 0.3, 0.3)};
  walker.trajectory.kind = TrajectorySpec::Kind::Linear;
  walker.trajectory.velocity = Vec3(0.06, 0.04, 0);
  walker.pulse = {0.2, 8.0, 0.0};
  recipe.movers.push_back(walker);
  return recipe;
}

Config tiny_config(const VoxelGridSpec& grid) {
  Config cfg;
  cfg.seed = 5;
  cfg.grid = grid;
  cfg.has_grid = true;
  cfg.encoding.position_levels = 2;
  cfg.encoding.time_levels = 2;
  cfg.encoding.time_embed_dim = 5;
  cfg.gaussians.count = 6;
  cfg.gaussians.feature_dim = 6;
  cfg.gaussians.scale_multiplier = 0.8;
  cfg.gaussians.opacity = 0.45;
  cfg.gaussians.feature_range = 1.0;
  cfg.deformation.hidden_dim = 8;
  cfg.deformation.depth = 3;
  cfg.loss.dep = 0.05;
  cfg.distill.aligned_dim = 4;
  cfg.distill.teacher_dim = 64;
  cfg.distill.patch_size = 4;
  cfg.train.steps = 4;
  cfg.train.frame_offsets = {-2, 0, 2};
  cfg.train.eval_every = 0;
  cfg.train.log_every = 1;
  return cfg;
}

RenderedMaps logits_map(int h, int w, int classes, double fill = 0.0) {
  RenderedMaps m;
  m.height = h;
  m.width = w;
  m.payload_dim = classes;
  m.payload.assign(static_cast<size_t>(h) * w * classes, fill);
  m.alpha.assign(static_cast<size_t>(h) * w, 1.0);
  return m;
}

}  // namespace

TEST_CASE("segmentation loss closed forms and oracle") {
  RenderedMaps maps = logits_map(2, 2, kNumClasses);
  std::vector<uint8_t> labels = {0, 3, kIgnoreLabel, 7};
  CHECK(segmentation_loss(maps, maps.alpha, labels) ==
        doctest::Approx(std::log(15.0)).epsilon(1e-12));

  // Perfectly peaked logits on the true class.
  for (int px = 0; px < 4; ++px)
    if (labels[px] != kIgnoreLabel) maps.payload[px * kNumClasses + labels[px]] = 30.0;
  CHECK(segmentation_loss(maps, maps.alpha, labels) < 1e-9);

  std::mt19937_64 rng(3);
  RenderedMaps rnd = logits_map(3, 3, kNumClasses);
  for (auto& v : rnd.payload) v = uniform_range(rng, -2, 2);
  std::vector<uint8_t> y(9);
  for (auto& v : y) v = static_cast<uint8_t>(rng() % 16);
  for (auto& v : y)
    if (v == 15) v = kIgnoreLabel;
  double ours = segmentation_loss(rnd, rnd.alpha, y);
  double sum = 0.0;
  int64_t count = 0;
  for (int px = 0; px < 9; ++px) {
    if (y[px] == kIgnoreLabel) continue;
    double mx = -1e300, lse = 0.0;
    for (int c = 0; c < kNumClasses; ++c) mx = std::max(mx, rnd.payload[px * kNumClasses + c]);
    for (int c = 0; c < kNumClasses; ++c) lse += std::exp(rnd.payload[px * kNumClasses + c] - mx);
    sum += mx + std::log(lse) - rnd.payload[px * kNumClasses + y[px]];
    ++count;
  }
  CHECK(ours == doctest::Approx(sum / count).epsilon(1e-10));
}

TEST_CASE("depth loss masked mean") {
  std::vector<double> depth = {5.0, 1.0, 2.0, 9.0};
  std::vector<uint8_t> valid = {1, 1, 0, 1};
  std::vector<float> pseudo = {3.0f, 1.0f, 7.0f, 0.0f};
  // Valid in both: pixels 0 and 1 -> (|5-3| + 0)/2.
  CHECK(depth_loss(depth, valid, pseudo) == doctest::Approx(1.0));
  std::vector<float> same = {5.0f, 1.0f, 2.0f, 9.0f};
  std::vector<uint8_t> all(4, 1);
  CHECK(depth_loss(depth, all, same) == 0.0);
  std::vector<uint8_t> none(4, 0);
  CHECK(depth_loss(depth, none, pseudo) == 0.0);
}

TEST_CASE("total loss weighting and linearity") {
  LossWeights w;
  w.seg = w.dep = w.distill = w.def = 0.0;
  CHECK(total_loss(1, 2, 3, 4, w) == 0.0);
  w.seg = w.dep = w.distill = w.def = 1.0;
  CHECK(total_loss(1, 2, 3, 4, w) == 10.0);
  LossWeights w2 = w;
  w2.seg = 2;
  w2.dep = 2;
  w2.distill = 2;
  w2.def = 2;
  CHECK(total_loss(1, 2, 3, 4, w2) == doctest::Approx(2.0 * total_loss(1, 2, 3, 4, w)));
  CHECK_THROWS_AS(total_loss(std::numeric_limits<double>::infinity(), 0, 0, 0, w), Error);
}

TEST_CASE("learning-rate schedule endpoints and continuity") {
  OptimizerConfig cfg;  // appendix defaults: 1e-4 base, ratio 1e-3, warmup 200
  cfg.max_steps = 2000;
  CHECK(lr_at(0, cfg) == doctest::Approx(1e-7).epsilon(1e-12));
  CHECK(lr_at(200, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(199, cfg) == doctest::Approx(1e-4 * (1e-3 + (1 - 1e-3) * 199.0 / 200.0)).epsilon(1e-12));
  CHECK(lr_at(2000, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(lr_at(5000, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
  // Continuity at the junction: both branch formulas give base_lr at step 200.
  double warmup_side = cfg.base_lr * (cfg.warmup_ratio + (1 - cfg.warmup_ratio) * 200.0 / 200.0);
  CHECK(warmup_side == doctest::Approx(lr_at(200, cfg)).epsilon(1e-12));
}

TEST_CASE("adam first step magnitude and zero-grad identity") {
  OptimizerConfig cfg;
  cfg.base_lr = 0.01;
  cfg.weight_decay = 0.0;
  cfg.warmup_iters = 0;
  cfg.max_steps = 1000000;  // effectively constant lr at the start
  ParamStore store;
  Tensor& p = store.create("p", {1});
  p.value[0] = 3.0;
  p.grad[0] = 1.0;
  AdamW opt(cfg);
  opt.step(store);
  CHECK(p.value[0] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));

  // Zero gradients and zero decay leave parameters unchanged.
  ParamStore store2;
  Tensor& q = store2.create("q", {3});
  q.value = {1.0, -2.0, 0.5};
  AdamW opt2(cfg);
  opt2.step(store2);
  CHECK(q.value == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("global-norm clipping halves a norm-10 gradient") {
  OptimizerConfig cfg;
  cfg.base_lr = 0.05;
  cfg.weight_decay = 0.0;
  cfg.warmup_iters = 0;
  cfg.max_steps = 100;
  cfg.grad_clip_norm = 5.0;

  ParamStore a;
  Tensor& pa = a.create("p", {2});
  pa.value = {1.0, 1.0};
  pa.grad = {6.0, 8.0};  // norm 10 -> clipped to (3, 4)
  AdamW oa(cfg);
  oa.step(a);

  OptimizerConfig unclipped = cfg;
  unclipped.grad_clip_norm = 0.0;
  ParamStore b;
  Tensor& pb = b.create("p", {2});
  pb.value = {1.0, 1.0};
  pb.grad = {3.0, 4.0};
  AdamW ob(unclipped);
  ob.step(b);

  CHECK(pa.value[0] == doctest::Approx(pb.value[0]).epsilon(1e-15));
  CHECK(pa.value[1] == doctest::Approx(pb.value[1]).epsilon(1e-15));

  ParamStore c;
  Tensor& pc = c.create("p", {1});
  pc.grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamW oc(cfg);
  CHECK_THROWS_AS(oc.step(c), Error);
}

TEST_CASE("a 3-step adam trajectory matches a hand-stepped reference") {
  OptimizerConfig cfg;
  cfg.base_lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.warmup_iters = 0;
  cfg.max_steps = 100;
  cfg.min_lr_ratio = 0.01;
  cfg.grad_clip_norm = 5.0;

  ParamStore store;
  Tensor& p = store.create("p", {2});
  p.value = {1.0, -2.0};
  AdamW opt(cfg);

  const double grads[3][2] = {{0.3, -0.4}, {-0.1, 0.2}, {0.05, 0.05}};

  // Independent scalar simulation of the same contract.
  double ref[2] = {1.0, -2.0};
  double m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 0; step < 3; ++step) {
    p.grad[0] = grads[step][0];
    p.grad[1] = grads[step][1];
    opt.step(store);

    const double min_lr = 0.1 * 0.01;
    const double progress = static_cast<double>(step) / 100.0;
    const double lr = min_lr + 0.5 * (0.1 - min_lr) * (1.0 + std::cos(M_PI * progress));
    double norm = std::sqrt(grads[step][0] * grads[step][0] + grads[step][1] * grads[step][1]);
    double scale = norm > 5.0 ? 5.0 / norm : 1.0;
    for (int i = 0; i < 2; ++i) {
      double g = grads[step][i] * scale;
      ref[i] -= lr * 0.01 * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      double mhat = m[i] / (1.0 - std::pow(0.9, step + 1));
      double vhat = v[i] / (1.0 - std::pow(0.999, step + 1));
      ref[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    CHECK(std::abs(p.value[0] - ref[0]) < 1e-10);
    CHECK(std::abs(p.value[1] - ref[1]) < 1e-10);
  }
}

TEST_CASE("full pipeline gradients match finite differences") {
  SyntheticScene scene = generate_scene(tiny_recipe());
  Config cfg = tiny_config(scene.grid());
  Model model = build_model(cfg);
  TeacherFeatureStack teacher =
      synth_teacher(scene, cfg.distill.patch_size, cfg.distill.teacher_dim, cfg.seed);

  FrozenOrders frozen;
  StepLosses base = compute_step(model, scene, &teacher, true, &frozen);
  CHECK(std::isfinite(base.total));
  CHECK(base.seg > 0.0);
  CHECK(base.dep > 0.0);
  CHECK(base.distill > 0.0);

  auto loss = [&]() { return compute_step(model, scene, &teacher, false, &frozen).total; };

  for (Tensor* t : model.store.all()) {
    INFO("tensor ", t->name);
    double err = test::finite_difference_error(loss, t->value.data(),
                                               static_cast<int>(t->value.size()), t->grad.data());
    CHECK(err < 1e-4);
  }
}

TEST_CASE("compute_step is deterministic") {
  SyntheticScene scene = generate_scene(tiny_recipe());
  Config cfg = tiny_config(scene.grid());
  Model a = build_model(cfg);
  Model b = build_model(cfg);
  CHECK(a.store.value_digest() == b.store.value_digest());
  TeacherFeatureStack teacher =
      synth_teacher(scene, cfg.distill.patch_size, cfg.distill.teacher_dim, cfg.seed);
  StepLosses la = compute_step(a, scene, &teacher, true);
  StepLosses lb = compute_step(b, scene, &teacher, true);
  CHECK(la.total == lb.total);
  CHECK(la.seg == lb.seg);
  uint64_t ga = kFnvOffset, gb = kFnvOffset;
  for (Tensor* t : a.store.all()) ga = fnv1a64(t->grad.data(), t->grad.size() * 8, ga);
  for (Tensor* t : b.store.all()) gb = fnv1a64(t->grad.data(), t->grad.size() * 8, gb);
  CHECK(ga == gb);
}

TEST_CASE("zero loss weights and zero decay leave parameters untouched") {
  SyntheticScene scene = generate_scene(tiny_recipe());
  Config cfg = tiny_config(scene.grid());
  cfg.loss = {0, 0, 0, 0};
  cfg.optimizer.weight_decay = 0.0;
  cfg.train.steps = 5;
  Model model = build_model(cfg);
  uint64_t before = model.store.value_digest();
  test::TempDir dir("train0");
  train(model, scene, dir.str(), config_to_json(cfg));
  CHECK(model.store.value_digest() == before);
}

TEST_CASE("train writes the metric log and a loadable checkpoint") {
  SyntheticScene scene = generate_scene(tiny_recipe());
  Config cfg = tiny_config(scene.grid());
  cfg.train.steps = 3;
  cfg.train.eval_every = 3;
  Model model = build_model(cfg);
  test::TempDir dir("train");
  TrainResult result = train(model, scene, dir.str(), config_to_json(cfg));
  CHECK(result.param_digest == model.store.value_digest());

  std::ifstream log(result.metrics_path);
  REQUIRE(log.good());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), ',') == 6);  // step + 6 fields
  }
  CHECK(lines == 3);

  Checkpoint ckpt = load_checkpoint(result.checkpoint_path);
  CHECK(ckpt.step == 3);
  CHECK(!ckpt.config_json.empty());
  Config restored = parse_config_json(ckpt.config_json);
  Model fresh = build_model(restored);
  apply_checkpoint(ckpt, fresh.store);
  CHECK(fresh.store.value_digest() == model.store.value_digest());
}

TEST_CASE("evaluate with ground truth as prediction is perfect") {
  SyntheticScene scene = generate_scene(tiny_recipe());
  Config cfg = tiny_config(scene.grid());
  Model model = build_model(cfg);
  EvalOptions opt;
  opt.gt_as_pred = true;
  opt.with_rayiou = true;
  EvalResult ev = evaluate(model, scene, opt);
  CHECK(ev.agg.miou == 1.0);
  CHECK(ev.agg.iou == 1.0);
  CHECK(ev.has_rayiou);
  for (double v : ev.rayiou.at) CHECK(v == 1.0);
}
