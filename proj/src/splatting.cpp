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
#include "dego/splatting.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dego {

namespace {

struct SplatItem {
  Mat3 R;
  Vec3 inv_s2;       // 1/s_k^2
  int lo[3], hi[3];  // inclusive voxel bbox, empty marked lo > hi
  bool empty = false;
};

SplatItem prepare_item(const GaussianPrimitive& g, const VoxelGridSpec& spec, double trunc) {
  SplatItem item;
  item.R = rotation_matrix(g.rot);
  for (int k = 0; k < 3; ++k) item.inv_s2[k] = 1.0 / (g.scale[k] * g.scale[k]);
  // Axis-aligned bound of the truncation ellipsoid: trunc * sqrt(Sigma_aa).
  for (int a = 0; a < 3; ++a) {
    double sigma_aa = 0.0;
    for (int k = 0; k < 3; ++k) sigma_aa += item.R(a, k) * item.R(a, k) * g.scale[k] * g.scale[k];
    double ext = trunc * std::sqrt(sigma_aa);
    double lo_f = (g.mu[a] - ext - spec.min_corner[a]) / spec.voxel_size - 0.5;
    double hi_f = (g.mu[a] + ext - spec.min_corner[a]) / spec.voxel_size - 0.5;
    item.lo[a] = std::max(0, static_cast<int>(std::ceil(lo_f - 1e-12)));
    item.hi[a] = std::min(spec.dims[a] - 1, static_cast<int>(std::floor(hi_f + 1e-12)));
    if (item.lo[a] > item.hi[a]) item.empty = true;
  }
  return item;
}

inline double mahalanobis2(const SplatItem& item, const GaussianPrimitive& g, const Vec3& point,
                           Vec3* u_out = nullptr) {
  Vec3 d = point - g.mu;
  Vec3 u = item.R.transpose() * d;
  if (u_out != nullptr) *u_out = u;
  return u[0] * u[0] * item.inv_s2[0] + u[1] * u[1] * item.inv_s2[1] + u[2] * u[2] * item.inv_s2[2];
}

void validate_inputs(const std::vector<GaussianPrimitive>& gaussians, const VoxelGridSpec& spec,
                     const SplatConfig& config) {
  config.validate();
  require(spec.voxel_count() > 0, ErrorKind::NonPositiveSize, "empty grid");
  for (size_t i = 0; i + 1 < gaussians.size(); ++i)
    require(gaussians[i].feat.size() == gaussians[i + 1].feat.size(), ErrorKind::ShapeMismatch,
            "gaussian feature widths differ");
}

}  // namespace

PredictionHeads make_prediction_heads(ParamStore& store, const std::string& prefix,
                                      int feature_dim, int num_classes, std::mt19937_64& rng) {
  PredictionHeads heads;
  heads.occ = make_linear(store, prefix + "/occ", feature_dim, 1);
  heads.sem = make_linear(store, prefix + "/sem", feature_dim, num_classes);
  init_uniform_fanin(*heads.occ.W, rng);
  init_uniform_fanin(*heads.sem.W, rng);
  return heads;
}

double gaussian_density(const GaussianPrimitive& g, const Vec3& point, double truncation_sigma) {
  SplatItem item;
  item.R = rotation_matrix(g.rot);
  for (int k = 0; k < 3; ++k) item.inv_s2[k] = 1.0 / (g.scale[k] * g.scale[k]);
  double m2 = mahalanobis2(item, g, point);
  if (m2 > truncation_sigma * truncation_sigma) return 0.0;
  return g.opacity * std::exp(-0.5 * m2);
}

FeatureVolume splat_features_serial(const std::vector<GaussianPrimitive>& gaussians,
                                    const VoxelGridSpec& spec, const SplatConfig& config) {
  validate_inputs(gaussians, spec, config);
  const int channels = gaussians.empty() ? 0 : static_cast<int>(gaussians.front().feat.size());
  FeatureVolume vol(spec, channels);
  const double trunc2 = config.truncation_sigma * config.truncation_sigma;
  for (size_t gi = 0; gi < gaussians.size(); ++gi) {
    const GaussianPrimitive& g = gaussians[gi];
    SplatItem item = prepare_item(g, spec, config.truncation_sigma);
    if (item.empty) continue;
    for (int ix = item.lo[0]; ix <= item.hi[0]; ++ix)
      for (int iy = item.lo[1]; iy <= item.hi[1]; ++iy)
        for (int iz = item.lo[2]; iz <= item.hi[2]; ++iz) {
          double m2 = mahalanobis2(item, g, spec.voxel_center(ix, iy, iz));
          if (m2 > trunc2) continue;
          double w = g.opacity * std::exp(-0.5 * m2);
          int64_t flat = spec.flat_index(ix, iy, iz);
          vol.weight[flat] += w;
          double* dst = vol.voxel_data(flat);
          const double* f = g.feat.data();
          for (int c = 0; c < channels; ++c) dst[c] += w * f[c];
        }
  }
  const int64_t count = spec.voxel_count();
  for (int64_t v = 0; v < count; ++v) {
    double inv = 1.0 / (vol.weight[v] + config.weight_epsilon);
    double* dst = vol.voxel_data(v);
    for (int c = 0; c < channels; ++c) dst[c] *= inv;
  }
  return vol;
}

FeatureVolume splat_features(const std::vector<GaussianPrimitive>& gaussians,
                             const VoxelGridSpec& spec, const SplatConfig& config) {
  const int threads = num_threads();
  if (threads <= 1) return splat_features_serial(gaussians, spec, config);

  validate_inputs(gaussians, spec, config);
  const int channels = gaussians.empty() ? 0 : static_cast<int>(gaussians.front().feat.size());
  FeatureVolume vol(spec, channels);
  const double trunc2 = config.truncation_sigma * config.truncation_sigma;
  const int n = static_cast<int>(gaussians.size());
  std::vector<SplatItem> items(n);
  for (int gi = 0; gi < n; ++gi) items[gi] = prepare_item(gaussians[gi], spec, config.truncation_sigma);

  const int64_t count = spec.voxel_count();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (int64_t flat = 0; flat < count; ++flat) {
    const int ix = static_cast<int>(flat / (spec.dims[1] * static_cast<int64_t>(spec.dims[2])));
    const int iy = static_cast<int>(flat / spec.dims[2] % spec.dims[1]);
    const int iz = static_cast<int>(flat % spec.dims[2]);
    const Vec3 center = spec.voxel_center(ix, iy, iz);
    double wsum = 0.0;
    double* dst = vol.voxel_data(flat);
    for (int gi = 0; gi < n; ++gi) {
      const SplatItem& item = items[gi];
      if (item.empty || ix < item.lo[0] || ix > item.hi[0] || iy < item.lo[1] ||
          iy > item.hi[1] || iz < item.lo[2] || iz > item.hi[2])
        continue;
      double m2 = mahalanobis2(item, gaussians[gi], center);
      if (m2 > trunc2) continue;
      double w = gaussians[gi].opacity * std::exp(-0.5 * m2);
      wsum += w;
      const double* f = gaussians[gi].feat.data();
      for (int c = 0; c < channels; ++c) dst[c] += w * f[c];
    }
    vol.weight[flat] = wsum;
    double inv = 1.0 / (wsum + config.weight_epsilon);
    for (int c = 0; c < channels; ++c) dst[c] *= inv;
  }
  return vol;
}

SplatGrads splat_features_backward(const std::vector<GaussianPrimitive>& gaussians,
                                   const VoxelGridSpec& spec, const SplatConfig& config,
                                   const FeatureVolume& volume, const double* d_data,
                                   const double* d_weight) {
  validate_inputs(gaussians, spec, config);
  const int n = static_cast<int>(gaussians.size());
  const int channels = volume.channels;
  const double trunc2 = config.truncation_sigma * config.truncation_sigma;

  SplatGrads grads;
  grads.d_mu.assign(n, Vec3::Zero());
  grads.d_rot.assign(n, Vec4::Zero());
  grads.d_scale.assign(n, Vec3::Zero());
  grads.d_opacity.assign(n, 0.0);
  grads.d_feat.assign(n, VecX::Zero(channels));

  // Per-voxel upstream terms shared by every contributing gaussian:
  //   dL/dS_c = d_data_c / (W + eps)
  //   dL/dW   = d_weight - sum_c d_data_c * data_c / (W + eps)
  const int64_t count = spec.voxel_count();
  std::vector<double> dS(static_cast<size_t>(count) * channels);
  std::vector<double> dW(static_cast<size_t>(count));
  for (int64_t v = 0; v < count; ++v) {
    double inv = 1.0 / (volume.weight[v] + config.weight_epsilon);
    double acc = d_weight != nullptr ? d_weight[v] : 0.0;
    const double* data = volume.voxel_data(v);
    for (int c = 0; c < channels; ++c) {
      double dd = d_data != nullptr ? d_data[v * channels + c] : 0.0;
      dS[v * channels + c] = dd * inv;
      acc -= dd * data[c] * inv;
    }
    dW[v] = acc;
  }

  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads) if (threads > 1)
#endif
  for (int gi = 0; gi < n; ++gi) {
    const GaussianPrimitive& g = gaussians[gi];
    SplatItem item = prepare_item(g, spec, config.truncation_sigma);
    if (item.empty) continue;
    const auto dR = rotation_matrix_jacobian(g.rot);
    Vec3 d_mu = Vec3::Zero(), d_scale = Vec3::Zero();
    Vec4 d_rot = Vec4::Zero();
    double d_op = 0.0;
    VecX d_feat = VecX::Zero(channels);
    const double* f = g.feat.data();
    for (int ix = item.lo[0]; ix <= item.hi[0]; ++ix)
      for (int iy = item.lo[1]; iy <= item.hi[1]; ++iy)
        for (int iz = item.lo[2]; iz <= item.hi[2]; ++iz) {
          const Vec3 center = spec.voxel_center(ix, iy, iz);
          Vec3 u;
          double m2 = mahalanobis2(item, g, center, &u);
          if (m2 > trunc2) continue;
          double gk = std::exp(-0.5 * m2);
          double w = g.opacity * gk;
          int64_t flat = spec.flat_index(ix, iy, iz);
          const double* dS_v = dS.data() + flat * channels;
          double dw = dW[flat];
          for (int c = 0; c < channels; ++c) {
            dw += f[c] * dS_v[c];
            d_feat[c] += w * dS_v[c];
          }
          if (dw == 0.0) continue;
          d_op += gk * dw;
          double dm2 = -0.5 * w * dw;
          Vec3 v_vec(u[0] * item.inv_s2[0], u[1] * item.inv_s2[1], u[2] * item.inv_s2[2]);
          Vec3 d = center - g.mu;
          d_mu -= 2.0 * dm2 * (item.R * v_vec);
          for (int k = 0; k < 3; ++k)
            d_scale[k] += dm2 * (-2.0 * u[k] * u[k] * item.inv_s2[k] / g.scale[k]);
          // dm2/dR_{ab} = 2 v_b d_a
          for (int q = 0; q < 4; ++q) {
            double acc = 0.0;
            for (int a = 0; a < 3; ++a)
              for (int b = 0; b < 3; ++b) acc += 2.0 * v_vec[b] * d[a] * dR[q](a, b);
            d_rot[q] += dm2 * acc;
          }
        }
    grads.d_mu[gi] = d_mu;
    grads.d_rot[gi] = d_rot;
    grads.d_scale[gi] = d_scale;
    grads.d_opacity[gi] = d_op;
    grads.d_feat[gi] = d_feat;
  }
  return grads;
}

std::vector<double> occupancy_head(const FeatureVolume& volume, const PredictionHeads& heads) {
  require(heads.occ.in_dim() == volume.channels, ErrorKind::ShapeMismatch,
          "occupancy head width does not match the volume");
  const int64_t count = volume.spec.voxel_count();
  std::vector<double> out(static_cast<size_t>(count));
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (int64_t v = 0; v < count; ++v) {
    double z;
    heads.occ.forward(volume.voxel_data(v), &z);
    out[v] = 1.0 / (1.0 + std::exp(-z));
  }
  return out;
}

void occupancy_head_backward(const FeatureVolume& volume, const PredictionHeads& heads,
                             const std::vector<double>& p_occ, const double* d_pocc,
                             double* d_volume_data) {
  const int64_t count = volume.spec.voxel_count();
  const int cf = volume.channels;
  for (int64_t v = 0; v < count; ++v) {
    double dz = p_occ[v] * (1.0 - p_occ[v]) * d_pocc[v];
    if (dz == 0.0) continue;
    heads.occ.backward(volume.voxel_data(v), &dz,
                       d_volume_data != nullptr ? d_volume_data + v * cf : nullptr, true);
  }
}

std::vector<double> semantic_head(const FeatureVolume& volume, const PredictionHeads& heads) {
  require(heads.sem.in_dim() == volume.channels, ErrorKind::ShapeMismatch,
          "semantic head width does not match the volume");
  const int64_t count = volume.spec.voxel_count();
  const int classes = heads.sem.out_dim();
  std::vector<double> out(static_cast<size_t>(count) * classes);
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (int64_t v = 0; v < count; ++v) {
    double* row = out.data() + v * classes;
    heads.sem.forward(volume.voxel_data(v), row);
    double mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    double inv = 1.0 / sum;
    for (int c = 0; c < classes; ++c) row[c] *= inv;
  }
  return out;
}

void semantic_head_backward(const FeatureVolume& volume, const PredictionHeads& heads,
                            const std::vector<double>& p_sem, const double* d_psem,
                            double* d_volume_data) {
  const int64_t count = volume.spec.voxel_count();
  const int classes = heads.sem.out_dim();
  const int cf = volume.channels;
  std::vector<double> dlogits(classes);
  for (int64_t v = 0; v < count; ++v) {
    const double* p = p_sem.data() + v * classes;
    const double* dp = d_psem + v * classes;
    double dot = 0.0;
    for (int c = 0; c < classes; ++c) dot += dp[c] * p[c];
    for (int c = 0; c < classes; ++c) dlogits[c] = p[c] * (dp[c] - dot);
    heads.sem.backward(volume.voxel_data(v), dlogits.data(),
                       d_volume_data != nullptr ? d_volume_data + v * cf : nullptr, true);
  }
}

SemanticLabelGrid extract_occupancy(const std::vector<double>& p_occ,
                                    const std::vector<double>& p_sem, const VoxelGridSpec& spec,
                                    int num_classes, double threshold) {
  const int64_t count = spec.voxel_count();
  require(static_cast<int64_t>(p_occ.size()) == count, ErrorKind::SpecMismatch,
          "p_occ size does not match the grid");
  require(static_cast<int64_t>(p_sem.size()) == count * num_classes, ErrorKind::SpecMismatch,
          "p_sem size does not match the grid");
  SemanticLabelGrid grid(spec);
  for (int64_t v = 0; v < count; ++v) {
    if (p_occ[v] < threshold) continue;
    const double* row = p_sem.data() + v * num_classes;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (row[c] > row[best]) best = c;
    grid.labels[v] = static_cast<uint8_t>(best);
  }
  return grid;
}

}  // namespace dego
