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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dego/common.hpp"

namespace dego {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr int kDefaultFeatureDim = 32;
inline constexpr int kNumClasses = 15;
inline constexpr uint8_t kFreeLabel = 255;    // unoccupied voxel sentinel
inline constexpr uint8_t kIgnoreLabel = 255;  // unsupervised pixel sentinel

/// Quaternion in (w, x, y, z) order, right-handed rotations.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  static Quat identity() { return Quat(1, 0, 0, 0); }

  double norm() const;
  Vec4 coeffs() const { return Vec4(w, x, y, z); }
};

/// Unit-norm result with the sign canonicalized so w >= 0.
/// DegenerateQuaternion when the norm is at or below 1e-12.
Quat normalize_quaternion(const Quat& q);

/// Rotation matrix of a unit quaternion. The polynomial form is used as-is,
/// so callers must pass normalized input for a proper rotation.
Mat3 rotation_matrix(const Quat& q);

/// dR/dw, dR/dx, dR/dy, dR/dz of rotation_matrix.
std::array<Mat3, 4> rotation_matrix_jacobian(const Quat& q);

Vec3 rotate(const Quat& q, const Vec3& v);

struct GaussianPrimitive {
  Vec3 mu = Vec3::Zero();
  Quat rot = Quat::identity();
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  VecX feat;
  double mask = 0.5;
};

/// One human-readable entry per violated invariant; empty iff valid.
std::vector<std::string> validate_gaussian(const GaussianPrimitive& g);

struct VoxelGridSpec {
  Vec3 min_corner = Vec3::Zero();
  Vec3 max_corner = Vec3::Ones();
  double voxel_size = 1.0;
  Eigen::Vector3i dims = Eigen::Vector3i::Ones();

  int64_t voxel_count() const {
    return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
  }

  // x-major storage: x slowest, z fastest.
  int64_t flat_index(int ix, int iy, int iz) const {
    return (static_cast<int64_t>(ix) * dims[1] + iy) * dims[2] + iz;
  }

  Vec3 voxel_center(int ix, int iy, int iz) const {
    return min_corner + Vec3(ix + 0.5, iy + 0.5, iz + 0.5) * voxel_size;
  }

  bool operator==(const VoxelGridSpec& o) const {
    return min_corner == o.min_corner && max_corner == o.max_corner &&
           voxel_size == o.voxel_size && dims == o.dims;
  }
};

VoxelGridSpec make_grid_spec(const Vec3& min_corner, const Vec3& max_corner, double voxel_size);

/// Floor index of a point in [min, max) per axis; empty outside (max faces excluded).
std::optional<Eigen::Vector3i> world_to_voxel(const VoxelGridSpec& spec, const Vec3& point);

struct FeatureVolume {
  VoxelGridSpec spec;
  int channels = 0;
  std::vector<double> data;    // voxel-count x channels, voxel-major
  std::vector<double> weight;  // per voxel

  FeatureVolume() = default;
  FeatureVolume(const VoxelGridSpec& s, int c)
      : spec(s), channels(c), data(static_cast<size_t>(s.voxel_count()) * c, 0.0),
        weight(static_cast<size_t>(s.voxel_count()), 0.0) {}

  double* voxel_data(int64_t flat) { return data.data() + flat * channels; }
  const double* voxel_data(int64_t flat) const { return data.data() + flat * channels; }
};

struct CameraModel {
  Mat3 K = Mat3::Identity();
  Mat4 E = Mat4::Identity();  // world -> camera; +z forward, x right, y down
  int width = 0;
  int height = 0;

  Mat3 rotation() const { return E.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return E.topRightCorner<3, 1>(); }
  Vec3 camera_center() const { return -rotation().transpose() * translation(); }

  /// K[2][2] == 1 and orthonormal rotation with det +1 (tolerance 1e-6).
  void validate() const;
};

struct SemanticLabelGrid {
  VoxelGridSpec spec;
  std::vector<uint8_t> labels;  // class id or kFreeLabel, x-major

  SemanticLabelGrid() = default;
  explicit SemanticLabelGrid(const VoxelGridSpec& s, uint8_t fill = kFreeLabel)
      : spec(s), labels(static_cast<size_t>(s.voxel_count()), fill) {}

  uint8_t at(int ix, int iy, int iz) const { return labels[spec.flat_index(ix, iy, iz)]; }
  uint8_t& at(int ix, int iy, int iz) { return labels[spec.flat_index(ix, iy, iz)]; }
};

// ---- DEGO-VOX1 --------------------------------------------------------------
// 16-byte magic "DEGO-VOX1" + 7 NULs, three LE u32 dims, then x-major payload.

void save_label_grid(const std::string& path, const SemanticLabelGrid& grid);

struct VoxelFilePayload {
  Eigen::Vector3i dims;
  std::vector<uint8_t> labels;
};

VoxelFilePayload load_voxel_file(const std::string& path);

/// Load and bind to a known spec; SpecMismatch when dims differ.
SemanticLabelGrid load_label_grid(const std::string& path, const VoxelGridSpec& spec);

}  // namespace dego
