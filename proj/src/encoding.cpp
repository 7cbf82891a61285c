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
#include "dego/encoding.hpp"

#include <cmath>

namespace dego {

void encode_position(const Vec3& mu, int levels, double* out) {
  for (int a = 0; a < 3; ++a) out[a] = mu[a];
  int pos = 3;
  double freq = 1.0;
  for (int k = 0; k < levels; ++k) {
    for (int a = 0; a < 3; ++a) out[pos + a] = std::sin(freq * mu[a]);
    for (int a = 0; a < 3; ++a) out[pos + 3 + a] = std::cos(freq * mu[a]);
    pos += 6;
    freq *= 2.0;
  }
}

VecX encode_position(const Vec3& mu, int levels) {
  VecX out(3 * (2 * levels + 1));
  encode_position(mu, levels, out.data());
  return out;
}

void encode_position_backward(const Vec3& mu, int levels, const double* dout, Vec3& dmu) {
  for (int a = 0; a < 3; ++a) dmu[a] += dout[a];
  int pos = 3;
  double freq = 1.0;
  for (int k = 0; k < levels; ++k) {
    for (int a = 0; a < 3; ++a) {
      double arg = freq * mu[a];
      dmu[a] += dout[pos + a] * freq * std::cos(arg);
      dmu[a] -= dout[pos + 3 + a] * freq * std::sin(arg);
    }
    pos += 6;
    freq *= 2.0;
  }
}

void encode_time(double t, int levels, double* out) {
  out[0] = t;
  int pos = 1;
  double freq = 1.0;
  for (int k = 0; k < levels; ++k) {
    out[pos] = std::sin(freq * t);
    out[pos + 1] = std::cos(freq * t);
    pos += 2;
    freq *= 2.0;
  }
}

VecX encode_time(double t, int levels) {
  VecX out(2 * levels + 1);
  encode_time(t, levels, out.data());
  return out;
}

TimeProjector make_time_projector(ParamStore& store, const std::string& prefix,
                                  const EncodingConfig& config) {
  config.validate();
  TimeProjector p;
  p.mlp = make_mlp(store, prefix,
                   {config.time_encoding_dim(), config.time_embed_dim, config.time_embed_dim});
  return p;
}

VecX embed_time(const VecX& gamma_t, const TimeProjector& projector) {
  require(gamma_t.size() == projector.in_dim(), ErrorKind::ShapeMismatch,
          "time encoding width does not match the projector");
  VecX out(projector.out_dim());
  projector.mlp.forward(gamma_t.data(), out.data());
  return out;
}

FeatureNet make_feature_net(ParamStore& store, const std::string& prefix, int feature_dim,
                            const EncodingConfig& config, int hidden_dim, int depth) {
  config.validate();
  require(feature_dim >= 1 && hidden_dim >= 1 && depth >= 1, ErrorKind::ShapeMismatch,
          "feature net dims must be >= 1");
  FeatureNet net;
  net.feature_dim = feature_dim;
  net.position_dim = config.position_encoding_dim();
  net.time_dim = config.time_embed_dim;
  std::vector<int> dims;
  dims.push_back(feature_dim + net.position_dim + net.time_dim);
  for (int k = 0; k < depth; ++k) dims.push_back(hidden_dim);
  net.mlp = make_mlp(store, prefix, dims);
  return net;
}

VecX build_hidden(const VecX& feat, const VecX& gamma_p, const VecX& e_t, const FeatureNet& net) {
  require(feat.size() == net.feature_dim, ErrorKind::ShapeMismatch, "feature width mismatch");
  require(gamma_p.size() == net.position_dim, ErrorKind::ShapeMismatch,
          "position encoding width mismatch");
  require(e_t.size() == net.time_dim, ErrorKind::ShapeMismatch, "time embedding width mismatch");
  VecX x(net.mlp.in_dim());
  x << feat, gamma_p, e_t;
  VecX h(net.mlp.out_dim());
  net.mlp.forward(x.data(), h.data());
  return h;
}

}  // namespace dego
