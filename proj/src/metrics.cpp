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
#include "dego/metrics.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dego {

const ClassTaxonomy& ClassTaxonomy::standard() {
  static const ClassTaxonomy tax{{
      "bicycle", "motorcycle", "pedestrian", "bus", "car", "construction_vehicle", "trailer",
      "truck", "barrier", "traffic_cone", "driveable_surface", "sidewalk", "terrain", "manmade",
      "vegetation",
  }};
  return tax;
}

int ClassTaxonomy::index_of(const std::string& name) const {
  for (int c = 0; c < kNumClasses; ++c)
    if (names[c] == name) return c;
  raise(ErrorKind::IndexOutOfRange, "unknown class name: " + name);
}

void ConfusionCounts::accumulate(const ConfusionCounts& other) {
  for (int c = 0; c < kNumClasses; ++c) {
    intersection[c] += other.intersection[c];
    union_[c] += other.union_[c];
  }
  geo_intersection += other.geo_intersection;
  geo_union += other.geo_union;
}

ConfusionCounts confusion(const SemanticLabelGrid& pred, const SemanticLabelGrid& gt,
                          const std::vector<uint8_t>* visible) {
  require(pred.spec == gt.spec, ErrorKind::SpecMismatch, "confusion grids differ in spec");
  if (visible != nullptr)
    require(visible->size() == pred.labels.size(), ErrorKind::SpecMismatch,
            "visibility mask size mismatch");
  const int64_t count = pred.spec.voxel_count();
  const int threads = num_threads();
  const int workers = threads > 1 ? threads : 1;
  std::vector<ConfusionCounts> partial(workers);
  bool bad_label = false;

#ifdef _OPENMP
#pragma omp parallel num_threads(workers) if (workers > 1)
#endif
  {
#ifdef _OPENMP
    const int w = workers > 1 ? omp_get_thread_num() : 0;
#else
    const int w = 0;
#endif
    ConfusionCounts& acc = partial[w];
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int64_t v = 0; v < count; ++v) {
      if (visible != nullptr && (*visible)[v] == 0) continue;
      const uint8_t p = pred.labels[v];
      const uint8_t g = gt.labels[v];
      const bool po = p != kFreeLabel;
      const bool go = g != kFreeLabel;
      if ((po && p >= kNumClasses) || (go && g >= kNumClasses)) {
        bad_label = true;
        continue;
      }
      if (po && go) ++acc.geo_intersection;
      if (po || go) ++acc.geo_union;
      if (po) ++acc.union_[p];
      if (go) {
        if (p == g)
          ++acc.intersection[g];
        else
          ++acc.union_[g];
      }
    }
  }
  require(!bad_label, ErrorKind::SpecMismatch, "label out of class range");
  ConfusionCounts total;
  for (const auto& p : partial) total.accumulate(p);
  return total;
}

AggregateReport aggregate_from_ious(const std::array<double, kNumClasses>& per_class,
                                    const std::array<bool, kNumClasses>& defined, double geo_iou) {
  AggregateReport rep;
  rep.per_class = per_class;
  rep.defined = defined;
  rep.iou = geo_iou;
  double sum_all = 0, sum_ins = 0, sum_scn = 0, sum_hum = 0;
  int n_all = 0, n_ins = 0, n_scn = 0, n_hum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!defined[c]) {
      rep.per_class[c] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    sum_all += per_class[c];
    ++n_all;
    if (ClassTaxonomy::is_instance(c)) {
      sum_ins += per_class[c];
      ++n_ins;
    } else {
      sum_scn += per_class[c];
      ++n_scn;
    }
    if (ClassTaxonomy::is_human(c)) {
      sum_hum += per_class[c];
      ++n_hum;
    }
  }
  rep.miou = n_all > 0 ? sum_all / n_all : 0.0;
  rep.insm = n_ins > 0 ? sum_ins / n_ins : 0.0;
  rep.scnm = n_scn > 0 ? sum_scn / n_scn : 0.0;
  rep.hcm = n_hum > 0 ? sum_hum / n_hum : 0.0;
  return rep;
}

AggregateReport aggregate(const ConfusionCounts& counts) {
  std::array<double, kNumClasses> iou{};
  std::array<bool, kNumClasses> defined{};
  for (int c = 0; c < kNumClasses; ++c) {
    defined[c] = counts.union_[c] > 0;
    iou[c] = defined[c]
                 ? static_cast<double>(counts.intersection[c]) / static_cast<double>(counts.union_[c])
                 : 0.0;
  }
  double geo = counts.geo_union > 0
                   ? static_cast<double>(counts.geo_intersection) / static_cast<double>(counts.geo_union)
                   : 0.0;
  return aggregate_from_ious(iou, defined, geo);
}

VoxelHit first_occupied_voxel(const SemanticLabelGrid& grid, const Vec3& origin, const Vec3& dir) {
  const VoxelGridSpec& spec = grid.spec;
  const double vs = spec.voxel_size;

  // Slab clip to the grid box.
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < spec.min_corner[a] || origin[a] >= spec.max_corner[a]) return {};
      continue;
    }
    double ta = (spec.min_corner[a] - origin[a]) / dir[a];
    double tb = (spec.max_corner[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 <= t0) return {};

  Vec3 entry = origin + t0 * dir;
  Eigen::Vector3i idx;
  for (int a = 0; a < 3; ++a) {
    double rel = (entry[a] - spec.min_corner[a]) / vs;
    idx[a] = std::min(spec.dims[a] - 1, std::max(0, static_cast<int>(std::floor(rel))));
  }

  Eigen::Vector3i step;
  Vec3 t_max, t_delta;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (spec.min_corner[a] + (idx[a] + 1) * vs - origin[a]) / dir[a];
      t_delta[a] = vs / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (spec.min_corner[a] + idx[a] * vs - origin[a]) / dir[a];
      t_delta[a] = -vs / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t_enter = t0;
  while (true) {
    uint8_t label = grid.at(idx[0], idx[1], idx[2]);
    if (label != kFreeLabel) return {true, idx, t_enter, label};
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t_enter = t_max[axis];
    if (t_enter > t1) return {};
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= spec.dims[axis]) return {};
    t_max[axis] += t_delta[axis];
  }
}

std::vector<Ray> camera_rays(const CameraModel& camera) {
  camera.validate();
  const Mat3 Rt = camera.rotation().transpose();
  const Vec3 center = camera.camera_center();
  const Mat3 Kinv = camera.K.inverse();
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(camera.width) * camera.height);
  for (int iy = 0; iy < camera.height; ++iy)
    for (int ix = 0; ix < camera.width; ++ix) {
      Vec3 pix(ix + 0.5, iy + 0.5, 1.0);
      Vec3 dir_cam = Kinv * pix;
      Vec3 dir = (Rt * dir_cam).normalized();
      rays.push_back({center, dir});
    }
  return rays;
}

RayIoUResult ray_iou(const SemanticLabelGrid& pred, const SemanticLabelGrid& gt,
                     const std::vector<Ray>& rays, const std::vector<double>& thresholds) {
  require(pred.spec == gt.spec, ErrorKind::SpecMismatch, "ray_iou grids differ in spec");
  for (const Ray& r : rays)
    require(std::abs(r.dir.norm() - 1.0) <= 1e-9, ErrorKind::NonUnitDirection,
            "ray direction must be unit length");

  const int nt = static_cast<int>(thresholds.size());
  const int nrays = static_cast<int>(rays.size());
  const int threads = num_threads();
  const int workers = threads > 1 ? threads : 1;

  struct Counts {
    std::vector<int64_t> tp;  // nt x classes
    std::array<int64_t, kNumClasses> pred_rays{};
    std::array<int64_t, kNumClasses> gt_rays{};
  };
  std::vector<Counts> partial(workers);
  for (auto& p : partial) p.tp.assign(static_cast<size_t>(nt) * kNumClasses, 0);

#ifdef _OPENMP
#pragma omp parallel num_threads(workers) if (workers > 1)
#endif
  {
#ifdef _OPENMP
    const int w = workers > 1 ? omp_get_thread_num() : 0;
#else
    const int w = 0;
#endif
    Counts& acc = partial[w];
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int r = 0; r < nrays; ++r) {
      VoxelHit ph = first_occupied_voxel(pred, rays[r].origin, rays[r].dir);
      VoxelHit gh = first_occupied_voxel(gt, rays[r].origin, rays[r].dir);
      if (ph.hit) ++acc.pred_rays[ph.label];
      if (gh.hit) ++acc.gt_rays[gh.label];
      if (ph.hit && gh.hit && ph.label == gh.label) {
        double err = std::abs(ph.t_enter - gh.t_enter);
        for (int t = 0; t < nt; ++t)
          if (err <= thresholds[t]) ++acc.tp[static_cast<size_t>(t) * kNumClasses + ph.label];
      }
    }
  }

  Counts total;
  total.tp.assign(static_cast<size_t>(nt) * kNumClasses, 0);
  for (const auto& p : partial) {
    for (size_t i = 0; i < p.tp.size(); ++i) total.tp[i] += p.tp[i];
    for (int c = 0; c < kNumClasses; ++c) {
      total.pred_rays[c] += p.pred_rays[c];
      total.gt_rays[c] += p.gt_rays[c];
    }
  }

  RayIoUResult out;
  out.thresholds = thresholds;
  out.at.resize(nt, 0.0);
  for (int t = 0; t < nt; ++t) {
    double sum = 0.0;
    int defined = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      int64_t tp = total.tp[static_cast<size_t>(t) * kNumClasses + c];
      int64_t uni = total.pred_rays[c] + total.gt_rays[c] - tp;
      if (total.pred_rays[c] + total.gt_rays[c] == 0) continue;
      sum += uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
      ++defined;
    }
    out.at[t] = defined > 0 ? sum / defined : 0.0;
  }
  for (double v : out.at) out.mean += v;
  if (nt > 0) out.mean /= nt;
  return out;
}

std::vector<uint8_t> visible_mask(const SemanticLabelGrid& gt,
                                  const std::vector<CameraModel>& cameras) {
  std::vector<uint8_t> mask(gt.labels.size(), 0);
  const VoxelGridSpec& spec = gt.spec;
  for (const CameraModel& camera : cameras) {
    std::vector<Ray> rays = camera_rays(camera);
    const int nrays = static_cast<int>(rays.size());
    const int threads = num_threads();
    // Writes are idempotent single-byte stores of 1, so the parallel path
    // yields the same mask as the serial one.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
    for (int r = 0; r < nrays; ++r) {
      const Vec3& origin = rays[r].origin;
      const Vec3& dir = rays[r].dir;
      // Walk and mark until the first occupied voxel, inclusive.
      const double vs = spec.voxel_size;
      double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
      bool miss = false;
      for (int a = 0; a < 3; ++a) {
        if (dir[a] == 0.0) {
          if (origin[a] < spec.min_corner[a] || origin[a] >= spec.max_corner[a]) miss = true;
          continue;
        }
        double ta = (spec.min_corner[a] - origin[a]) / dir[a];
        double tb = (spec.max_corner[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (miss || t1 <= t0) continue;
      Vec3 entry = origin + t0 * dir;
      Eigen::Vector3i idx;
      Eigen::Vector3i step;
      Vec3 t_max, t_delta;
      for (int a = 0; a < 3; ++a) {
        double rel = (entry[a] - spec.min_corner[a]) / vs;
        idx[a] = std::min(spec.dims[a] - 1, std::max(0, static_cast<int>(std::floor(rel))));
        if (dir[a] > 0.0) {
          step[a] = 1;
          t_max[a] = (spec.min_corner[a] + (idx[a] + 1) * vs - origin[a]) / dir[a];
          t_delta[a] = vs / dir[a];
        } else if (dir[a] < 0.0) {
          step[a] = -1;
          t_max[a] = (spec.min_corner[a] + idx[a] * vs - origin[a]) / dir[a];
          t_delta[a] = -vs / dir[a];
        } else {
          step[a] = 0;
          t_max[a] = std::numeric_limits<double>::infinity();
          t_delta[a] = std::numeric_limits<double>::infinity();
        }
      }
      while (true) {
        int64_t flat = spec.flat_index(idx[0], idx[1], idx[2]);
        mask[flat] = 1;
        if (gt.labels[flat] != kFreeLabel) break;  // occluded behind first hit
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        if (t_max[axis] > t1) break;
        idx[axis] += step[axis];
        if (idx[axis] < 0 || idx[axis] >= spec.dims[axis]) break;
        t_max[axis] += t_delta[axis];
      }
    }
  }
  return mask;
}

}  // namespace dego
