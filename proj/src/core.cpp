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
#include "dego/core.hpp"

#include <cmath>
#include <fstream>

namespace dego {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat normalize_quaternion(const Quat& q) {
  Quat r = q;
  if (r.w < 0.0) {
    r.w = -r.w;
    r.x = -r.x;
    r.y = -r.y;
    r.z = -r.z;
  }
  double n2 = r.w * r.w + r.x * r.x + r.y * r.y + r.z * r.z;
  if (n2 <= 1e-24) raise(ErrorKind::DegenerateQuaternion, "norm below 1e-12");
  // Already unit within a few ulp: return unchanged so the op is bitwise
  // idempotent after one pass.
  if (std::abs(n2 - 1.0) < 1e-13) return r;
  double inv = 1.0 / std::sqrt(n2);
  return Quat(r.w * inv, r.x * inv, r.y * inv, r.z * inv);
}

Mat3 rotation_matrix(const Quat& q) {
  double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

std::array<Mat3, 4> rotation_matrix_jacobian(const Quat& q) {
  double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y,
      2 * z, 0, -2 * x,
      -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z,
      2 * y, -4 * x, -2 * w,
      2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w,
      2 * x, 0, 2 * z,
      -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x,
      2 * w, -4 * z, 2 * y,
      2 * x, 2 * y, 0;
  return {dw, dx, dy, dz};
}

Vec3 rotate(const Quat& q, const Vec3& v) { return rotation_matrix(q) * v; }

std::vector<std::string> validate_gaussian(const GaussianPrimitive& g) {
  std::vector<std::string> violations;
  double n = g.rot.norm();
  if (std::abs(n - 1.0) > 1e-6) violations.push_back("rotation norm");
  for (int k = 0; k < 3; ++k) {
    if (!(g.scale[k] > 0.0)) {
      violations.push_back("scale positivity");
      break;
    }
  }
  if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) violations.push_back("opacity range");
  if (!(g.mask >= 0.0 && g.mask <= 1.0)) violations.push_back("mask range");
  if (!g.mu.allFinite() || !g.scale.allFinite() || !std::isfinite(g.opacity) ||
      !g.feat.allFinite())
    violations.push_back("finiteness");
  return violations;
}

VoxelGridSpec make_grid_spec(const Vec3& min_corner, const Vec3& max_corner, double voxel_size) {
  require(voxel_size > 0.0, ErrorKind::NonPositiveSize, "voxel_size must be positive");
  VoxelGridSpec spec;
  spec.min_corner = min_corner;
  spec.max_corner = max_corner;
  spec.voxel_size = voxel_size;
  for (int k = 0; k < 3; ++k) {
    double extent = max_corner[k] - min_corner[k];
    require(extent > 0.0, ErrorKind::NonPositiveSize,
            "grid extent must be positive on axis " + std::to_string(k));
    double cells = extent / voxel_size;
    double rounded = std::round(cells);
    require(std::abs(extent - rounded * voxel_size) <= 1e-9, ErrorKind::NonDivisibleExtent,
            "extent " + std::to_string(extent) + " on axis " + std::to_string(k) +
                " is not a multiple of " + std::to_string(voxel_size));
    require(rounded >= 1.0, ErrorKind::NonPositiveSize, "grid has no cells on axis " + std::to_string(k));
    spec.dims[k] = static_cast<int>(rounded);
  }
  return spec;
}

std::optional<Eigen::Vector3i> world_to_voxel(const VoxelGridSpec& spec, const Vec3& point) {
  Eigen::Vector3i idx;
  for (int k = 0; k < 3; ++k) {
    double rel = (point[k] - spec.min_corner[k]) / spec.voxel_size;
    double f = std::floor(rel);
    if (f < 0.0 || f >= static_cast<double>(spec.dims[k])) return std::nullopt;
    idx[k] = static_cast<int>(f);
  }
  return idx;
}

void CameraModel::validate() const {
  require(K(2, 2) == 1.0, ErrorKind::SpecMismatch, "K[2][2] must be 1");
  require(width > 0 && height > 0, ErrorKind::SpecMismatch, "image size must be positive");
  Mat3 R = rotation();
  require((R * R.transpose() - Mat3::Identity()).norm() < 1e-6, ErrorKind::SpecMismatch,
          "extrinsic rotation is not orthonormal");
  require(std::abs(R.determinant() - 1.0) < 1e-6, ErrorKind::SpecMismatch,
          "extrinsic rotation determinant must be +1");
}

namespace {
constexpr char kVoxMagic[16] = {'D', 'E', 'G', 'O', '-', 'V', 'O', 'X', '1',
                                '\0', '\0', '\0', '\0', '\0', '\0', '\0'};
}

void save_label_grid(const std::string& path, const SemanticLabelGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::IoError, "cannot open for write: " + path);
  write_bytes(os, kVoxMagic, 16);
  for (int k = 0; k < 3; ++k) write_u32(os, static_cast<uint32_t>(grid.spec.dims[k]));
  write_bytes(os, grid.labels.data(), grid.labels.size());
  require(os.good(), ErrorKind::IoError, "write failed: " + path);
}

VoxelFilePayload load_voxel_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::MissingFile, path);
  char magic[16];
  read_bytes(is, magic, 16);
  require(std::memcmp(magic, kVoxMagic, 16) == 0, ErrorKind::BadMagic, path);
  VoxelFilePayload out;
  int64_t count = 1;
  for (int k = 0; k < 3; ++k) {
    out.dims[k] = static_cast<int>(read_u32(is));
    count *= out.dims[k];
  }
  require(count > 0, ErrorKind::TruncatedFile, "empty dims in " + path);
  out.labels.resize(static_cast<size_t>(count));
  read_bytes(is, out.labels.data(), out.labels.size());
  return out;
}

SemanticLabelGrid load_label_grid(const std::string& path, const VoxelGridSpec& spec) {
  VoxelFilePayload payload = load_voxel_file(path);
  require(payload.dims == spec.dims, ErrorKind::SpecMismatch,
          "voxel file dims do not match the grid spec: " + path);
  SemanticLabelGrid grid(spec);
  grid.labels = std::move(payload.labels);
  return grid;
}

}  // namespace dego
