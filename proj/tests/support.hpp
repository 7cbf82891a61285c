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

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dego/core.hpp"
#include "dego/splatting.hpp"

namespace dego::test {

/// Central finite differences against an analytic gradient; returns the worst
/// relative error. `params` are perturbed in place and restored.
inline double finite_difference_error(std::function<double()> loss, double* params, int count,
                                      const double* analytic, double h = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

inline GaussianPrimitive random_gaussian(std::mt19937_64& rng, int feature_dim,
                                         const Vec3& lo = Vec3(-2, -2, -2),
                                         const Vec3& hi = Vec3(2, 2, 2)) {
  GaussianPrimitive g;
  for (int a = 0; a < 3; ++a) g.mu[a] = uniform_range(rng, lo[a], hi[a]);
  g.rot = normalize_quaternion(Quat(uniform_range(rng, 0.2, 1.0), uniform_range(rng, -0.6, 0.6),
                                    uniform_range(rng, -0.6, 0.6), uniform_range(rng, -0.6, 0.6)));
  for (int a = 0; a < 3; ++a) g.scale[a] = uniform_range(rng, 0.3, 1.2);
  g.opacity = uniform_range(rng, 0.2, 0.9);
  g.feat = VecX::Zero(feature_dim);
  for (int c = 0; c < feature_dim; ++c) g.feat[c] = uniform_range(rng, -1.0, 1.0);
  g.mask = uniform_range(rng, 0.05, 0.95);
  return g;
}

/// Exhaustive (voxel, gaussian) double loop without bounding boxes.
inline FeatureVolume splat_oracle(const std::vector<GaussianPrimitive>& gaussians,
                                  const VoxelGridSpec& spec, const SplatConfig& config) {
  const int channels = gaussians.empty() ? 0 : static_cast<int>(gaussians.front().feat.size());
  FeatureVolume vol(spec, channels);
  for (int ix = 0; ix < spec.dims[0]; ++ix)
    for (int iy = 0; iy < spec.dims[1]; ++iy)
      for (int iz = 0; iz < spec.dims[2]; ++iz) {
        const Vec3 center = spec.voxel_center(ix, iy, iz);
        const int64_t flat = spec.flat_index(ix, iy, iz);
        double wsum = 0.0;
        for (const GaussianPrimitive& g : gaussians) {
          double w = gaussian_density(g, center, config.truncation_sigma);
          wsum += w;
          for (int c = 0; c < channels; ++c) vol.data[flat * channels + c] += w * g.feat[c];
        }
        vol.weight[flat] = wsum;
        for (int c = 0; c < channels; ++c)
          vol.data[flat * channels + c] /= wsum + config.weight_epsilon;
      }
  return vol;
}

/// First-hit voxel by stepping at 0.01 * voxel_size along the ray.
struct OracleHit {
  bool hit = false;
  Eigen::Vector3i idx{0, 0, 0};
};

inline OracleHit fine_step_first_hit(const SemanticLabelGrid& grid, const Vec3& origin,
                                     const Vec3& dir) {
  const double step = 0.01 * grid.spec.voxel_size;
  const double span = (grid.spec.max_corner - grid.spec.min_corner).norm() + origin.norm() + 1.0;
  for (double t = 0.5 * step; t < 2.0 * span; t += step) {
    auto idx = world_to_voxel(grid.spec, origin + t * dir);
    if (!idx.has_value()) {
      // Skip until the ray first enters the grid, then stop once it leaves.
      if (t > step && world_to_voxel(grid.spec, origin + (t - step) * dir).has_value()) break;
      continue;
    }
    if (grid.at((*idx)[0], (*idx)[1], (*idx)[2]) != kFreeLabel) return {true, *idx};
  }
  return {};
}

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dego_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& sub = "") const {
    return sub.empty() ? path.string() : (path / sub).string();
  }
};

}  // namespace dego::test
