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
#include "dego/rendering.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dego {

namespace {

struct ProjectionScratch {
  Vec3 p_c;       // camera-space center
  Vec3 u;         // K * p_c
  double w;       // homogeneous divisor (K row 2 dot p_c)
  Eigen::Matrix<double, 2, 3> J;
  Mat3 M;         // W Sigma W^T
};

bool project_core(const GaussianPrimitive& g, const CameraModel& camera, ProjectionScratch& s,
                  Projected2D& out) {
  const Mat3 W = camera.rotation();
  s.p_c = W * g.mu + camera.translation();
  if (s.p_c.z() <= kMinCameraDepth) return false;
  s.u = camera.K * s.p_c;
  s.w = s.u[2];
  out.center = Vec2(s.u[0] / s.w, s.u[1] / s.w);
  out.depth = s.p_c.z();

  for (int i = 0; i < 2; ++i)
    for (int l = 0; l < 3; ++l)
      s.J(i, l) = (camera.K(i, l) * s.w - s.u[i] * camera.K(2, l)) / (s.w * s.w);

  Mat3 R = rotation_matrix(g.rot);
  Mat3 sigma = R * g.scale.cwiseProduct(g.scale).asDiagonal() * R.transpose();
  s.M = W * sigma * W.transpose();
  out.cov2d = s.J * s.M * s.J.transpose();
  out.cov2d(0, 0) += kCovarianceFloor;
  out.cov2d(1, 1) += kCovarianceFloor;
  return true;
}

}  // namespace

std::optional<Projected2D> project_gaussian(const GaussianPrimitive& g, const CameraModel& camera) {
  ProjectionScratch s;
  Projected2D out;
  if (!project_core(g, camera, s, out)) return std::nullopt;
  return out;
}

void project_gaussian_backward(const GaussianPrimitive& g, const CameraModel& camera,
                               const Vec2& d_center, const Mat2& d_cov2d, double d_depth,
                               Vec3& d_mu, Vec4& d_rot, Vec3& d_scale) {
  ProjectionScratch s;
  Projected2D out;
  if (!project_core(g, camera, s, out)) return;

  const Mat3 W = camera.rotation();
  Mat3 R = rotation_matrix(g.rot);

  // cov2d = J M J^T (+ constant floor)
  Mat3 dM = s.J.transpose() * d_cov2d * s.J;
  Eigen::Matrix<double, 2, 3> dJ = (d_cov2d + d_cov2d.transpose()) * s.J * s.M;
  Mat3 dSigma = W.transpose() * dM * W;

  // Sigma = R diag(s^2) R^T
  Mat3 dSigma_sym = dSigma + dSigma.transpose();
  Mat3 dR_mat = dSigma_sym * R * g.scale.cwiseProduct(g.scale).asDiagonal();
  const auto dRdq = rotation_matrix_jacobian(g.rot);
  for (int q = 0; q < 4; ++q) d_rot[q] += (dR_mat.array() * dRdq[q].array()).sum();
  Mat3 rtdr = R.transpose() * dSigma * R;
  for (int k = 0; k < 3; ++k) d_scale[k] += 2.0 * g.scale[k] * rtdr(k, k);

  // center = (u0/w, u1/w); its Jacobian w.r.t. p_c is exactly J.
  Vec3 dp_c = s.J.transpose() * d_center;

  // J itself depends on p_c:
  // dJ_il/dp_c_m = -a^2 (K_il K_2m + K_im K_2l) + 2 a^3 u_i K_2l K_2m
  const double a = 1.0 / s.w;
  for (int i = 0; i < 2; ++i)
    for (int l = 0; l < 3; ++l) {
      double gJ = dJ(i, l);
      if (gJ == 0.0) continue;
      for (int m = 0; m < 3; ++m) {
        double term = -a * a * (camera.K(i, l) * camera.K(2, m) + camera.K(i, m) * camera.K(2, l)) +
                      2.0 * a * a * a * s.u[i] * camera.K(2, l) * camera.K(2, m);
        dp_c[m] += gJ * term;
      }
    }

  dp_c[2] += d_depth;
  d_mu += W.transpose() * dp_c;
}

namespace {

void build_order(const std::vector<Projected2D>& projected, const std::vector<int>& gaussian_index,
                 const std::vector<int>* fixed_order, int total_gaussians,
                 std::vector<int>& order) {
  const int m = static_cast<int>(projected.size());
  order.clear();
  if (fixed_order != nullptr) {
    std::vector<int> slot_of(static_cast<size_t>(total_gaussians), -1);
    for (int s = 0; s < m; ++s) slot_of[gaussian_index[s]] = s;
    for (int gi : *fixed_order)
      if (gi >= 0 && gi < total_gaussians && slot_of[gi] >= 0) order.push_back(slot_of[gi]);
    return;
  }
  order.resize(m);
  for (int s = 0; s < m; ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
    if (projected[lhs].depth != projected[rhs].depth)
      return projected[lhs].depth < projected[rhs].depth;
    return gaussian_index[lhs] < gaussian_index[rhs];
  });
}

}  // namespace

RenderForward render_forward(const std::vector<GaussianPrimitive>& gaussians,
                             const double* payloads, int payload_dim, const CameraModel& camera,
                             const std::vector<int>* fixed_order) {
  camera.validate();
  require(payload_dim >= 0, ErrorKind::PayloadShapeMismatch, "negative payload width");

  RenderForward fwd;
  fwd.height = camera.height;
  fwd.width = camera.width;
  fwd.payload_dim = payload_dim;

  const int n = static_cast<int>(gaussians.size());
  for (int gi = 0; gi < n; ++gi) {
    auto proj = project_gaussian(gaussians[gi], camera);
    if (!proj.has_value()) continue;
    fwd.projected.push_back(*proj);
    fwd.gaussian_index.push_back(gi);
  }
  build_order(fwd.projected, fwd.gaussian_index, fixed_order, n, fwd.order);

  const int m = static_cast<int>(fwd.projected.size());
  fwd.conic.resize(static_cast<size_t>(m) * 3);
  fwd.max_m2.resize(m);
  fwd.skip_radius2.resize(m);
  for (int s = 0; s < m; ++s) {
    const Mat2& c = fwd.projected[s].cov2d;
    double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    double qxx = c(1, 1) / det, qxy = -c(0, 1) / det, qyy = c(0, 0) / det;
    fwd.conic[s * 3 + 0] = qxx;
    fwd.conic[s * 3 + 1] = qxy;
    fwd.conic[s * 3 + 2] = qyy;
    double op = gaussians[fwd.gaussian_index[s]].opacity;
    if (op <= kAlphaSkip) {
      fwd.max_m2[s] = -1.0;
      fwd.skip_radius2[s] = 0.0;
      continue;
    }
    fwd.max_m2[s] = 2.0 * std::log(op / kAlphaSkip);
    double mid = 0.5 * (qxx + qyy);
    double rad = std::sqrt(std::max(0.0, mid * mid - (qxx * qyy - qxy * qxy)));
    double lmin = mid - rad;
    fwd.skip_radius2[s] = lmin > 0.0 ? fwd.max_m2[s] / lmin : std::numeric_limits<double>::infinity();
  }

  const int64_t npx = static_cast<int64_t>(fwd.height) * fwd.width;
  fwd.maps.height = fwd.height;
  fwd.maps.width = fwd.width;
  fwd.maps.payload_dim = payload_dim;
  fwd.maps.payload.assign(static_cast<size_t>(npx) * payload_dim, 0.0);
  fwd.maps.alpha.assign(static_cast<size_t>(npx), 0.0);
  fwd.pixels.assign(static_cast<size_t>(npx), {});

  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (int64_t px = 0; px < npx; ++px) {
    const int iy = static_cast<int>(px / fwd.width);
    const int ix = static_cast<int>(px % fwd.width);
    const Vec2 sample(ix + 0.5, iy + 0.5);
    double T = 1.0;
    double* dst = fwd.maps.payload.data() + px * payload_dim;
    auto& pairs = fwd.pixels[px];
    for (int oi : fwd.order) {
      if (fwd.max_m2[oi] < 0.0) continue;
      const Projected2D& proj = fwd.projected[oi];
      const double dx = sample[0] - proj.center[0];
      const double dy = sample[1] - proj.center[1];
      const double r2 = dx * dx + dy * dy;
      if (r2 > fwd.skip_radius2[oi]) continue;
      const double* q = fwd.conic.data() + oi * 3;
      const double m2 = q[0] * dx * dx + 2.0 * q[1] * dx * dy + q[2] * dy * dy;
      if (m2 > fwd.max_m2[oi]) continue;
      const double g = std::exp(-0.5 * m2);
      const double alpha =
          std::min(kAlphaClamp, gaussians[fwd.gaussian_index[oi]].opacity * g);
      if (alpha < kAlphaSkip) continue;
      pairs.push_back({oi, g, T});
      const double wgt = T * alpha;
      const double* row = payloads + static_cast<int64_t>(fwd.gaussian_index[oi]) * payload_dim;
      for (int c = 0; c < payload_dim; ++c) dst[c] += wgt * row[c];
      T *= 1.0 - alpha;
    }
    fwd.maps.alpha[px] = 1.0 - T;
  }
  return fwd;
}

RenderedMaps render_maps(const std::vector<GaussianPrimitive>& gaussians, const double* payloads,
                         int payload_dim, const CameraModel& camera,
                         const std::vector<int>* fixed_order) {
  return render_forward(gaussians, payloads, payload_dim, camera, fixed_order).maps;
}

namespace {

struct PixelScatter {
  // per projected slot
  std::vector<double> d_center_x, d_center_y;
  std::vector<double> d_cov_xx, d_cov_xy, d_cov_yy;
  std::vector<double> d_opacity;
  // per original gaussian x payload
  std::vector<double> d_payload;

  void init(int slots, int64_t payload_entries) {
    d_center_x.assign(slots, 0.0);
    d_center_y.assign(slots, 0.0);
    d_cov_xx.assign(slots, 0.0);
    d_cov_xy.assign(slots, 0.0);
    d_cov_yy.assign(slots, 0.0);
    d_opacity.assign(slots, 0.0);
    d_payload.assign(static_cast<size_t>(payload_entries), 0.0);
  }

  void merge(const PixelScatter& other) {
    for (size_t i = 0; i < d_center_x.size(); ++i) {
      d_center_x[i] += other.d_center_x[i];
      d_center_y[i] += other.d_center_y[i];
      d_cov_xx[i] += other.d_cov_xx[i];
      d_cov_xy[i] += other.d_cov_xy[i];
      d_cov_yy[i] += other.d_cov_yy[i];
      d_opacity[i] += other.d_opacity[i];
    }
    for (size_t i = 0; i < d_payload.size(); ++i) d_payload[i] += other.d_payload[i];
  }
};

}  // namespace

RenderGrads render_backward(const RenderForward& fwd,
                            const std::vector<GaussianPrimitive>& gaussians,
                            const double* payloads, const double* d_payload_maps,
                            const double* d_alpha_map, const CameraModel& camera,
                            int depth_column) {
  const int n = static_cast<int>(gaussians.size());
  const int m = static_cast<int>(fwd.projected.size());
  const int P = fwd.payload_dim;
  const int64_t npx = static_cast<int64_t>(fwd.height) * fwd.width;

  RenderGrads grads;
  grads.d_mu.assign(n, Vec3::Zero());
  grads.d_rot.assign(n, Vec4::Zero());
  grads.d_scale.assign(n, Vec3::Zero());
  grads.d_opacity.assign(n, 0.0);
  grads.d_payload.assign(static_cast<size_t>(n) * P, 0.0);

  const int threads = num_threads();
  const int workers = threads > 1 ? threads : 1;
  std::vector<PixelScatter> scatter(workers);
  for (auto& s : scatter) s.init(m, static_cast<int64_t>(n) * P);

  // Per-pixel adjoint of front-to-back compositing:
  //   d payload(u)/d alpha_k = T_k P_k - rear_k/(1 - alpha_k)
  //   d A/d alpha_k          = T_end/(1 - alpha_k)
  // with rear_k the payload accumulated behind k and T_k the stored
  // transmittance in front of k.
#ifdef _OPENMP
#pragma omp parallel num_threads(workers) if (workers > 1)
#endif
  {
#ifdef _OPENMP
    const int worker = workers > 1 ? omp_get_thread_num() : 0;
#else
    const int worker = 0;
#endif
    PixelScatter& out = scatter[worker];
    std::vector<double> rear(P, 0.0);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int64_t px = 0; px < npx; ++px) {
      const auto& pairs = fwd.pixels[px];
      if (pairs.empty()) continue;
      const int iy = static_cast<int>(px / fwd.width);
      const int ix = static_cast<int>(px % fwd.width);
      const Vec2 sample(ix + 0.5, iy + 0.5);
      const double* dout = d_payload_maps != nullptr ? d_payload_maps + px * P : nullptr;
      const double dA = d_alpha_map != nullptr ? d_alpha_map[px] : 0.0;

      const auto& last = pairs.back();
      const double last_pre = gaussians[fwd.gaussian_index[last.slot]].opacity * last.g;
      const double t_end = last.T * (1.0 - std::min(kAlphaClamp, last_pre));

      std::fill(rear.begin(), rear.end(), 0.0);
      for (int k = static_cast<int>(pairs.size()) - 1; k >= 0; --k) {
        const auto& pr = pairs[k];
        const int slot = pr.slot;
        const int gi = fwd.gaussian_index[slot];
        const double pre = gaussians[gi].opacity * pr.g;
        const bool clamped = pre > kAlphaClamp;
        const double alpha = clamped ? kAlphaClamp : pre;
        const double inv = 1.0 / (1.0 - alpha);
        const double t_alpha = pr.T * alpha;
        const double* row = payloads + static_cast<int64_t>(gi) * P;

        double d_alpha = dA * t_end * inv;
        if (dout != nullptr) {
          for (int c = 0; c < P; ++c) {
            const double gc = dout[c];
            if (gc == 0.0) continue;
            out.d_payload[static_cast<int64_t>(gi) * P + c] += gc * t_alpha;
            d_alpha += gc * (pr.T * row[c] - rear[c] * inv);
          }
          for (int c = 0; c < P; ++c) rear[c] += t_alpha * row[c];
        }

        if (clamped || d_alpha == 0.0) continue;
        out.d_opacity[slot] += pr.g * d_alpha;
        const double dm2 = -0.5 * pre * d_alpha;
        const Projected2D& proj = fwd.projected[slot];
        const double dx = sample[0] - proj.center[0];
        const double dy = sample[1] - proj.center[1];
        const double* q = fwd.conic.data() + slot * 3;
        const double vx = q[0] * dx + q[1] * dy;
        const double vy = q[1] * dx + q[2] * dy;
        out.d_center_x[slot] += -2.0 * dm2 * vx;
        out.d_center_y[slot] += -2.0 * dm2 * vy;
        out.d_cov_xx[slot] += -dm2 * vx * vx;
        out.d_cov_xy[slot] += -dm2 * vx * vy;
        out.d_cov_yy[slot] += -dm2 * vy * vy;
      }
    }
  }

  for (int w = 1; w < workers; ++w) scatter[0].merge(scatter[w]);
  const PixelScatter& acc = scatter[0];

  for (int slot = 0; slot < m; ++slot) {
    const int gi = fwd.gaussian_index[slot];
    grads.d_opacity[gi] += acc.d_opacity[slot];
    Vec2 d_center(acc.d_center_x[slot], acc.d_center_y[slot]);
    Mat2 d_cov;
    d_cov << acc.d_cov_xx[slot], acc.d_cov_xy[slot], acc.d_cov_xy[slot], acc.d_cov_yy[slot];
    double d_depth = 0.0;
    if (depth_column >= 0) d_depth = acc.d_payload[static_cast<int64_t>(gi) * P + depth_column];
    if (d_center != Vec2::Zero() || d_cov != Mat2::Zero() || d_depth != 0.0)
      project_gaussian_backward(gaussians[gi], camera, d_center, d_cov, d_depth, grads.d_mu[gi],
                                grads.d_rot[gi], grads.d_scale[gi]);
  }

  grads.d_payload = acc.d_payload;
  if (depth_column >= 0)
    for (int gi = 0; gi < n; ++gi)
      grads.d_payload[static_cast<int64_t>(gi) * P + depth_column] = 0.0;
  return grads;
}

std::vector<double> normalized_depth(const RenderedMaps& depth_maps) {
  require(depth_maps.payload_dim == 1, ErrorKind::PayloadShapeMismatch,
          "normalized_depth expects single-channel maps");
  std::vector<double> out(depth_maps.alpha.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = depth_maps.payload[i] / (depth_maps.alpha[i] + kDepthNormEps);
  return out;
}

std::vector<uint8_t> valid_mask_from_alpha(const std::vector<double>& alpha, double threshold) {
  std::vector<uint8_t> out(alpha.size());
  for (size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] >= threshold ? 1 : 0;
  return out;
}

RenderAllResult render_all(const std::vector<GaussianPrimitive>& gaussians,
                           const CameraModel& camera, const Linear& sem_head,
                           const Linear& student_proj) {
  const int n = static_cast<int>(gaussians.size());
  const int classes = sem_head.out_dim();
  const int ca = student_proj.out_dim();
  const int P = classes + ca + 1;
  std::vector<double> payload(static_cast<size_t>(n) * P, 0.0);
  for (int i = 0; i < n; ++i) {
    const GaussianPrimitive& g = gaussians[i];
    require(g.feat.size() == sem_head.in_dim() && g.feat.size() == student_proj.in_dim(),
            ErrorKind::ShapeMismatch, "feature width does not match the heads");
    double* row = payload.data() + static_cast<int64_t>(i) * P;
    sem_head.forward(g.feat.data(), row);
    student_proj.forward(g.feat.data(), row + classes);
    auto proj = project_gaussian(g, camera);
    row[P - 1] = proj.has_value() ? proj->depth : 0.0;
  }
  RenderForward fwd = render_forward(gaussians, payload.data(), P, camera);

  RenderAllResult out;
  const int64_t npx = static_cast<int64_t>(camera.height) * camera.width;
  auto split = [&](RenderedMaps& dst, int from, int width) {
    dst.height = camera.height;
    dst.width = camera.width;
    dst.payload_dim = width;
    dst.payload.resize(static_cast<size_t>(npx) * width);
    dst.alpha = fwd.maps.alpha;
    for (int64_t px = 0; px < npx; ++px)
      std::memcpy(dst.payload.data() + px * width, fwd.maps.payload.data() + px * P + from,
                  sizeof(double) * width);
  };
  split(out.semantic, 0, classes);
  split(out.features, classes, ca);
  split(out.depth, classes + ca, 1);
  return out;
}

namespace {
constexpr char kImgMagic[9] = {'D', 'E', 'G', 'O', '-', 'I', 'M', 'G', '1'};
}

void save_image(const std::string& path, int height, int width, int payload_dim,
                const std::vector<float>& data) {
  require(static_cast<int64_t>(data.size()) ==
              static_cast<int64_t>(height) * width * payload_dim,
          ErrorKind::PayloadShapeMismatch, "image payload size mismatch");
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::IoError, "cannot open for write: " + path);
  write_bytes(os, kImgMagic, sizeof(kImgMagic));
  write_u32(os, static_cast<uint32_t>(height));
  write_u32(os, static_cast<uint32_t>(width));
  write_u32(os, static_cast<uint32_t>(payload_dim));
  for (float v : data) write_f32(os, v);
  require(os.good(), ErrorKind::IoError, "write failed: " + path);
}

void save_image(const std::string& path, int height, int width, int payload_dim,
                const std::vector<double>& data) {
  std::vector<float> f(data.size());
  for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
  save_image(path, height, width, payload_dim, f);
}

ImageFile load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::MissingFile, path);
  char magic[sizeof(kImgMagic)];
  read_bytes(is, magic, sizeof(kImgMagic));
  require(std::memcmp(magic, kImgMagic, sizeof(kImgMagic)) == 0, ErrorKind::BadMagic, path);
  ImageFile img;
  img.height = static_cast<int>(read_u32(is));
  img.width = static_cast<int>(read_u32(is));
  img.payload_dim = static_cast<int>(read_u32(is));
  int64_t count = static_cast<int64_t>(img.height) * img.width * img.payload_dim;
  img.data.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) img.data[i] = read_f32(is);
  return img;
}

}  // namespace dego
