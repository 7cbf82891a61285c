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

#include <optional>
#include <vector>

#include "dego/core.hpp"
#include "dego/nn.hpp"

namespace dego {

// Rasterization constants.
inline constexpr double kMinCameraDepth = 0.01;   // meters; cull at or below
inline constexpr double kCovarianceFloor = 0.3;   // px^2 added to cov2d diagonal
inline constexpr double kAlphaClamp = 0.999;
inline constexpr double kAlphaSkip = 1e-14;       // contributions below are dropped
inline constexpr double kAlphaValid = 0.01;       // pixels below lack surface evidence
inline constexpr double kDepthNormEps = 1e-8;

struct Projected2D {
  Vec2 center = Vec2::Zero();  // pixels
  Mat2 cov2d = Mat2::Zero();   // pixels^2, includes the diagonal floor
  double depth = 0.0;          // camera z, meters
};

/// Perspective projection with first-order covariance transport; empty when
/// the center is at or behind kMinCameraDepth.
std::optional<Projected2D> project_gaussian(const GaussianPrimitive& g, const CameraModel& camera);

/// Adjoint of project_gaussian; accumulates into the output grads.
void project_gaussian_backward(const GaussianPrimitive& g, const CameraModel& camera,
                               const Vec2& d_center, const Mat2& d_cov2d, double d_depth,
                               Vec3& d_mu, Vec4& d_rot, Vec3& d_scale);

struct RenderedMaps {
  int height = 0, width = 0, payload_dim = 0;
  std::vector<double> payload;  // H*W*P, row-major, channel-interleaved
  std::vector<double> alpha;    // H*W

  double* at(int iy, int ix) { return payload.data() + (static_cast<int64_t>(iy) * width + ix) * payload_dim; }
  const double* at(int iy, int ix) const {
    return payload.data() + (static_cast<int64_t>(iy) * width + ix) * payload_dim;
  }
};

/// Retained forward state; enough to run the exact compositing adjoint.
struct RenderForward {
  int height = 0, width = 0, payload_dim = 0;
  std::vector<Projected2D> projected;
  std::vector<int> gaussian_index;   // projected slot -> original index
  std::vector<int> order;            // projected slots, front to back
  std::vector<double> conic;         // per projected slot: Qxx, Qxy, Qyy
  std::vector<double> max_m2;        // alpha-skip bound; negative = never visible
  std::vector<double> skip_radius2;  // cheap pixel-distance reject
  RenderedMaps maps;

  struct Pair {
    int slot;   // projected slot
    double g;   // exp(-m2/2)
    double T;   // transmittance before this contribution
  };
  std::vector<std::vector<Pair>> pixels;  // per pixel, front-to-back
};

/// `payloads` is N x P row-major, one row per gaussian. `fixed_order`, when
/// given, lists original gaussian indices in the compositing order to use
/// (gradient checks hold it fixed across perturbations).
RenderForward render_forward(const std::vector<GaussianPrimitive>& gaussians,
                             const double* payloads, int payload_dim, const CameraModel& camera,
                             const std::vector<int>* fixed_order = nullptr);

/// Convenience wrapper returning only the maps.
RenderedMaps render_maps(const std::vector<GaussianPrimitive>& gaussians, const double* payloads,
                         int payload_dim, const CameraModel& camera,
                         const std::vector<int>* fixed_order = nullptr);

struct RenderGrads {
  std::vector<Vec3> d_mu;
  std::vector<Vec4> d_rot;
  std::vector<Vec3> d_scale;
  std::vector<double> d_opacity;
  std::vector<double> d_payload;  // N x P; the depth column, if routed, is zeroed
};

/// Adjoint of render_forward. `payloads` must be the forward's payload rows.
/// `depth_column`, when >= 0, marks the payload column that held the
/// per-gaussian camera depth: its gradient is chained through the projection
/// into mu instead of being reported as payload grad.
RenderGrads render_backward(const RenderForward& fwd,
                            const std::vector<GaussianPrimitive>& gaussians,
                            const double* payloads, const double* d_payload_maps,
                            const double* d_alpha_map, const CameraModel& camera,
                            int depth_column = -1);

/// payload/(alpha + eps) for single-channel depth maps.
std::vector<double> normalized_depth(const RenderedMaps& depth_maps);

std::vector<uint8_t> valid_mask_from_alpha(const std::vector<double>& alpha,
                                           double threshold = kAlphaValid);

struct RenderAllResult {
  RenderedMaps semantic;  // composited logits, P = C
  RenderedMaps depth;     // composited camera depth, P = 1
  RenderedMaps features;  // composited aligned features, P = C_a
};

/// One projection + sort + compositing pass shared across the payloads.
RenderAllResult render_all(const std::vector<GaussianPrimitive>& gaussians,
                           const CameraModel& camera, const Linear& sem_head,
                           const Linear& student_proj);

// ---- DEGO-IMG1 ---------------------------------------------------------------
// magic "DEGO-IMG1", u32 H, W, P, then H*W*P little-endian f32, row-major.

void save_image(const std::string& path, int height, int width, int payload_dim,
                const std::vector<float>& data);
void save_image(const std::string& path, int height, int width, int payload_dim,
                const std::vector<double>& data);

struct ImageFile {
  int height = 0, width = 0, payload_dim = 0;
  std::vector<float> data;
};

ImageFile load_image(const std::string& path);

}  // namespace dego
