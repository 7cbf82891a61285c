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
#include "dego/distillation.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dego {

AlignmentProjectors make_alignment_projectors(ParamStore& store, const std::string& prefix,
                                              int teacher_channels, int feature_dim,
                                              int aligned_dim, std::mt19937_64& rng) {
  require(aligned_dim >= 1, ErrorKind::ShapeMismatch, "aligned width must be >= 1");
  AlignmentProjectors p;
  p.aligned_dim = aligned_dim;
  p.teacher_proj = make_linear(store, prefix + "/teacher_proj", teacher_channels, aligned_dim);
  p.student_proj = make_linear(store, prefix + "/student_proj", feature_dim, aligned_dim);
  init_uniform_fanin(*p.teacher_proj.W, rng);
  init_uniform_fanin(*p.student_proj.W, rng);
  return p;
}

namespace {

struct BilinearTap {
  int x0, x1, y0, y1;
  double wx, wy;  // weight of x1/y1
};

// align-corners-false: source coordinate (i + 0.5) * in/out - 0.5, negative
// values clamped to 0, indices clamped to the edge cells.
BilinearTap bilinear_tap(int out_i, int out_j, int in_h, int in_w, int out_h, int out_w) {
  BilinearTap t;
  double sy = std::max(0.0, (out_i + 0.5) * static_cast<double>(in_h) / out_h - 0.5);
  double sx = std::max(0.0, (out_j + 0.5) * static_cast<double>(in_w) / out_w - 0.5);
  t.y0 = std::min(in_h - 1, static_cast<int>(sy));
  t.x0 = std::min(in_w - 1, static_cast<int>(sx));
  t.y1 = std::min(in_h - 1, t.y0 + 1);
  t.x1 = std::min(in_w - 1, t.x0 + 1);
  t.wy = sy - t.y0;
  t.wx = sx - t.x0;
  return t;
}

}  // namespace

MapStack project_teacher(const TeacherFeatureStack& stack, const AlignmentProjectors& projectors,
                         int target_h, int target_w) {
  require(stack.channels == projectors.teacher_proj.in_dim(), ErrorKind::ShapeMismatch,
          "teacher stack channels do not match the projector");
  require(target_h >= 1 && target_w >= 1, ErrorKind::ShapeMismatch, "target size must be positive");
  const int ca = projectors.teacher_proj.out_dim();

  // Project each patch cell once.
  std::vector<double> cells(static_cast<size_t>(stack.views) * stack.patch_h * stack.patch_w * ca);
  std::vector<double> x(stack.channels);
  for (int v = 0; v < stack.views; ++v)
    for (int py = 0; py < stack.patch_h; ++py)
      for (int px = 0; px < stack.patch_w; ++px) {
        const float* src = stack.cell(v, py, px);
        for (int c = 0; c < stack.channels; ++c) x[c] = src[c];
        double* dst = cells.data() +
                      ((static_cast<int64_t>(v) * stack.patch_h + py) * stack.patch_w + px) * ca;
        projectors.teacher_proj.forward(x.data(), dst);
      }

  MapStack maps;
  maps.views = stack.views;
  maps.height = target_h;
  maps.width = target_w;
  maps.channels = ca;
  maps.v.assign(static_cast<size_t>(stack.views) * target_h * target_w * ca, 0.0);
  auto cell_at = [&](int v, int y, int x2) {
    return cells.data() + ((static_cast<int64_t>(v) * stack.patch_h + y) * stack.patch_w + x2) * ca;
  };
  for (int v = 0; v < stack.views; ++v)
    for (int i = 0; i < target_h; ++i)
      for (int j = 0; j < target_w; ++j) {
        BilinearTap t = bilinear_tap(i, j, stack.patch_h, stack.patch_w, target_h, target_w);
        double* dst = maps.at(v, static_cast<int64_t>(i) * target_w + j);
        const double* c00 = cell_at(v, t.y0, t.x0);
        const double* c01 = cell_at(v, t.y0, t.x1);
        const double* c10 = cell_at(v, t.y1, t.x0);
        const double* c11 = cell_at(v, t.y1, t.x1);
        for (int c = 0; c < ca; ++c)
          dst[c] = (1 - t.wy) * ((1 - t.wx) * c00[c] + t.wx * c01[c]) +
                   t.wy * ((1 - t.wx) * c10[c] + t.wx * c11[c]);
      }
  return maps;
}

void project_teacher_backward(const TeacherFeatureStack& stack,
                              const AlignmentProjectors& projectors, const MapStack& d_maps) {
  const int ca = projectors.teacher_proj.out_dim();
  require(d_maps.channels == ca && d_maps.views == stack.views, ErrorKind::ShapeMismatch,
          "teacher map grads have the wrong shape");
  // Bilinear transpose: scatter map grads onto the patch cells.
  std::vector<double> d_cells(
      static_cast<size_t>(stack.views) * stack.patch_h * stack.patch_w * ca, 0.0);
  auto dcell_at = [&](int v, int y, int x2) {
    return d_cells.data() +
           ((static_cast<int64_t>(v) * stack.patch_h + y) * stack.patch_w + x2) * ca;
  };
  for (int v = 0; v < stack.views; ++v)
    for (int i = 0; i < d_maps.height; ++i)
      for (int j = 0; j < d_maps.width; ++j) {
        BilinearTap t = bilinear_tap(i, j, stack.patch_h, stack.patch_w, d_maps.height, d_maps.width);
        const double* g = d_maps.at(v, static_cast<int64_t>(i) * d_maps.width + j);
        double* d00 = dcell_at(v, t.y0, t.x0);
        double* d01 = dcell_at(v, t.y0, t.x1);
        double* d10 = dcell_at(v, t.y1, t.x0);
        double* d11 = dcell_at(v, t.y1, t.x1);
        for (int c = 0; c < ca; ++c) {
          d00[c] += (1 - t.wy) * (1 - t.wx) * g[c];
          d01[c] += (1 - t.wy) * t.wx * g[c];
          d10[c] += t.wy * (1 - t.wx) * g[c];
          d11[c] += t.wy * t.wx * g[c];
        }
      }
  std::vector<double> x(stack.channels);
  for (int v = 0; v < stack.views; ++v)
    for (int py = 0; py < stack.patch_h; ++py)
      for (int px = 0; px < stack.patch_w; ++px) {
        const float* src = stack.cell(v, py, px);
        for (int c = 0; c < stack.channels; ++c) x[c] = src[c];
        projectors.teacher_proj.backward(x.data(), dcell_at(v, py, px), nullptr);
      }
}

std::vector<double> project_student(const std::vector<GaussianPrimitive>& gaussians,
                                    const AlignmentProjectors& projectors) {
  const int ca = projectors.student_proj.out_dim();
  std::vector<double> payload(gaussians.size() * static_cast<size_t>(ca));
  for (size_t i = 0; i < gaussians.size(); ++i) {
    require(gaussians[i].feat.size() == projectors.student_proj.in_dim(), ErrorKind::ShapeMismatch,
            "gaussian feature width does not match the student projector");
    projectors.student_proj.forward(gaussians[i].feat.data(), payload.data() + i * ca);
  }
  return payload;
}

void project_student_backward(const std::vector<GaussianPrimitive>& gaussians,
                              const AlignmentProjectors& projectors, const double* d_payload,
                              std::vector<VecX>* d_feat) {
  const int ca = projectors.student_proj.out_dim();
  const int cg = projectors.student_proj.in_dim();
  std::vector<double> dx(cg);
  for (size_t i = 0; i < gaussians.size(); ++i) {
    projectors.student_proj.backward(gaussians[i].feat.data(), d_payload + i * ca,
                                     d_feat != nullptr ? dx.data() : nullptr);
    if (d_feat != nullptr)
      for (int c = 0; c < cg; ++c) (*d_feat)[i][c] += dx[c];
  }
}

double distillation_loss(const MapStack& teacher, const MapStack& student,
                         const std::vector<uint8_t>& valid) {
  require(teacher.views == student.views && teacher.height == student.height &&
              teacher.width == student.width && teacher.channels == student.channels,
          ErrorKind::ShapeMismatch, "teacher/student map shapes differ");
  require(valid.size() == static_cast<size_t>(teacher.views) * teacher.pixels(),
          ErrorKind::ShapeMismatch, "valid mask size mismatch");
  const int ch = teacher.channels;
  double sum = 0.0;
  int64_t counted = 0;
  for (int v = 0; v < teacher.views; ++v)
    for (int64_t px = 0; px < teacher.pixels(); ++px) {
      if (valid[static_cast<size_t>(v) * teacher.pixels() + px] == 0) continue;
      const double* t = teacher.at(v, px);
      const double* s = student.at(v, px);
      double tt = 0, ss = 0, ts = 0;
      for (int c = 0; c < ch; ++c) {
        tt += t[c] * t[c];
        ss += s[c] * s[c];
        ts += t[c] * s[c];
      }
      double nt = std::sqrt(tt), ns = std::sqrt(ss);
      if (nt < kCosineNormEps || ns < kCosineNormEps) continue;
      double cosv = std::min(1.0, std::max(-1.0, ts / (nt * ns)));
      sum += 1.0 - cosv;
      ++counted;
    }
  return counted > 0 ? sum / static_cast<double>(counted) : 0.0;
}

void distillation_loss_backward(const MapStack& teacher, const MapStack& student,
                                const std::vector<uint8_t>& valid, double lambda,
                                MapStack* d_teacher, MapStack* d_student) {
  const int ch = teacher.channels;
  int64_t counted = 0;
  for (int v = 0; v < teacher.views; ++v)
    for (int64_t px = 0; px < teacher.pixels(); ++px) {
      if (valid[static_cast<size_t>(v) * teacher.pixels() + px] == 0) continue;
      const double* t = teacher.at(v, px);
      const double* s = student.at(v, px);
      double tt = 0, ss = 0;
      for (int c = 0; c < ch; ++c) {
        tt += t[c] * t[c];
        ss += s[c] * s[c];
      }
      if (std::sqrt(tt) < kCosineNormEps || std::sqrt(ss) < kCosineNormEps) continue;
      ++counted;
    }
  if (counted == 0) return;
  const double scale = lambda / static_cast<double>(counted);

  for (int v = 0; v < teacher.views; ++v)
    for (int64_t px = 0; px < teacher.pixels(); ++px) {
      if (valid[static_cast<size_t>(v) * teacher.pixels() + px] == 0) continue;
      const double* t = teacher.at(v, px);
      const double* s = student.at(v, px);
      double tt = 0, ss = 0, ts = 0;
      for (int c = 0; c < ch; ++c) {
        tt += t[c] * t[c];
        ss += s[c] * s[c];
        ts += t[c] * s[c];
      }
      double nt = std::sqrt(tt), ns = std::sqrt(ss);
      if (nt < kCosineNormEps || ns < kCosineNormEps) continue;
      double raw = ts / (nt * ns);
      if (raw >= 1.0 || raw <= -1.0) continue;  // clamped, zero slope
      // d(1-cos)/ds = -t/(nt ns) + cos * s/ss
      double inv = 1.0 / (nt * ns);
      if (d_student != nullptr) {
        double* ds = d_student->at(v, px);
        for (int c = 0; c < ch; ++c) ds[c] += scale * (-t[c] * inv + raw * s[c] / ss);
      }
      if (d_teacher != nullptr) {
        double* dt = d_teacher->at(v, px);
        for (int c = 0; c < ch; ++c) dt[c] += scale * (-s[c] * inv + raw * t[c] / tt);
      }
    }
}

namespace {
constexpr char kTfMagic[8] = {'D', 'E', 'G', 'O', '-', 'T', 'F', '1'};
}

void save_teacher_features(const std::string& path, const TeacherFeatureStack& stack) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::IoError, "cannot open for write: " + path);
  write_bytes(os, kTfMagic, sizeof(kTfMagic));
  write_u32(os, 1);
  write_u32(os, static_cast<uint32_t>(stack.views));
  write_u32(os, static_cast<uint32_t>(stack.patch_h));
  write_u32(os, static_cast<uint32_t>(stack.patch_w));
  write_u32(os, static_cast<uint32_t>(stack.channels));
  write_u32(os, stack.block_index);
  for (float v : stack.data) write_f32(os, v);
  require(os.good(), ErrorKind::IoError, "write failed: " + path);
}

TeacherFeatureStack load_teacher_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::MissingFile, path);
  char magic[sizeof(kTfMagic)];
  read_bytes(is, magic, sizeof(kTfMagic));
  require(std::memcmp(magic, kTfMagic, sizeof(kTfMagic)) == 0, ErrorKind::BadMagic, path);
  uint32_t version = read_u32(is);
  require(version == 1, ErrorKind::BadMagic, "unsupported teacher file version");
  TeacherFeatureStack stack;
  stack.views = static_cast<int>(read_u32(is));
  stack.patch_h = static_cast<int>(read_u32(is));
  stack.patch_w = static_cast<int>(read_u32(is));
  stack.channels = static_cast<int>(read_u32(is));
  stack.block_index = read_u32(is);
  int64_t count = static_cast<int64_t>(stack.views) * stack.patch_h * stack.patch_w * stack.channels;
  require(count >= 0, ErrorKind::TruncatedFile, "bad teacher header");
  stack.data.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    stack.data[i] = read_f32(is);
    require(std::isfinite(stack.data[i]), ErrorKind::NonFiniteValue,
            "teacher feature " + std::to_string(i) + " is not finite");
  }
  return stack;
}

std::vector<std::vector<double>> synth_embedding_table(int keys, int dim, uint64_t seed) {
  require(keys <= dim, ErrorKind::ShapeMismatch,
          "embedding table needs dim >= keys for orthonormal rows");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> table(keys, std::vector<double>(dim));
  for (int k = 0; k < keys; ++k) {
    auto& row = table[k];
    while (true) {
      for (double& x : row) x = normal01(rng);
      // Gram-Schmidt against previous rows.
      for (int j = 0; j < k; ++j) {
        double dot = 0.0;
        for (int c = 0; c < dim; ++c) dot += row[c] * table[j][c];
        for (int c = 0; c < dim; ++c) row[c] -= dot * table[j][c];
      }
      double norm = 0.0;
      for (double x : row) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (double& x : row) x /= norm;
        break;
      }
    }
  }
  return table;
}

TeacherFeatureStack synth_teacher(const SyntheticScene& scene, int patch_size, int teacher_dim,
                                  uint64_t seed, uint32_t block_index) {
  require(patch_size >= 1, ErrorKind::ShapeMismatch, "patch size must be >= 1");
  require(!scene.cameras.empty(), ErrorKind::MissingGroundTruth, "scene has no cameras");
  const int ref = scene.frame_of_offset(0);
  require(ref >= 0 && ref < static_cast<int>(scene.seg.size()) &&
              scene.seg[ref].size() == scene.cameras.size(),
          ErrorKind::MissingGroundTruth, "scene lacks reference-frame labels");

  const int views = static_cast<int>(scene.cameras.size());
  const int width = scene.cameras[0].width;
  const int height = scene.cameras[0].height;
  require(width % patch_size == 0 && height % patch_size == 0, ErrorKind::ShapeMismatch,
          "image size must be a multiple of the patch size");
  const int ph = height / patch_size;
  const int pw = width / patch_size;

  // Key spaces: (class or empty) x view for the spatial half,
  // (class or empty) x flow bin for the temporal half.
  constexpr int kFlowBins = 4;
  constexpr double kFlowBinWidth = 0.25;  // meters per frame
  const int class_slots = kNumClasses + 1;
  const int spatial_keys = class_slots * views;
  const int temporal_keys = class_slots * kFlowBins;
  auto spatial_table = synth_embedding_table(spatial_keys, teacher_dim, seed ^ 0x5eedA11ceull);
  auto temporal_table = synth_embedding_table(temporal_keys, teacher_dim, seed ^ 0x7ea0cafeull);

  TeacherFeatureStack stack;
  stack.views = views;
  stack.patch_h = ph;
  stack.patch_w = pw;
  stack.channels = 2 * teacher_dim;
  stack.block_index = block_index;
  stack.data.assign(static_cast<size_t>(views) * ph * pw * stack.channels, 0.0f);

  for (int v = 0; v < views; ++v) {
    const auto& seg = scene.seg[ref][v];
    std::vector<double> flow = object_speed_map(scene, v);
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        // Majority class over the patch (ties break low); all-IGNORE -> empty.
        std::array<int, kNumClasses> votes{};
        for (int dy = 0; dy < patch_size; ++dy)
          for (int dx = 0; dx < patch_size; ++dx) {
            uint8_t c = seg[static_cast<size_t>(py * patch_size + dy) * width + px * patch_size + dx];
            if (c != kIgnoreLabel) ++votes[c];
          }
        int cls = -1, best = 0;
        for (int c = 0; c < kNumClasses; ++c)
          if (votes[c] > best) {
            best = votes[c];
            cls = c;
          }
        double mean_flow = 0.0;
        if (cls >= 0) {
          int cnt = 0;
          for (int dy = 0; dy < patch_size; ++dy)
            for (int dx = 0; dx < patch_size; ++dx) {
              size_t idx = static_cast<size_t>(py * patch_size + dy) * width + px * patch_size + dx;
              if (seg[idx] == cls) {
                mean_flow += flow[idx];
                ++cnt;
              }
            }
          mean_flow /= cnt;
        }
        int class_slot = cls >= 0 ? cls : kNumClasses;
        int bin = std::min(kFlowBins - 1, static_cast<int>(std::floor(mean_flow / kFlowBinWidth)));
        const auto& emb_sp = spatial_table[class_slot * views + v];
        const auto& emb_tmp = temporal_table[class_slot * kFlowBins + bin];
        float* dst = stack.data.data() +
                     ((static_cast<int64_t>(v) * ph + py) * pw + px) * stack.channels;
        for (int c = 0; c < teacher_dim; ++c) dst[c] = static_cast<float>(emb_sp[c]);
        for (int c = 0; c < teacher_dim; ++c)
          dst[teacher_dim + c] = static_cast<float>(emb_tmp[c]);
      }
  }
  return stack;
}

}  // namespace dego
