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

#include "dego/core.hpp"
#include "dego/nn.hpp"

namespace dego {

struct EncodingConfig {
  int position_levels = 6;  // L_p
  int time_levels = 4;      // L_t
  int time_embed_dim = 32;  // C_t

  int position_encoding_dim() const { return 3 * (2 * position_levels + 1); }
  int time_encoding_dim() const { return 2 * time_levels + 1; }

  void validate() const {
    require(position_levels >= 1 && time_levels >= 1 && time_embed_dim >= 1,
            ErrorKind::ShapeMismatch, "encoding levels and width must be >= 1");
  }
};

/// Layout [mu | sin(2^0 mu) | cos(2^0 mu) | ... ], blocks of 3 over the axes.
/// `out` must hold 3*(2*levels+1) entries.
void encode_position(const Vec3& mu, int levels, double* out);
VecX encode_position(const Vec3& mu, int levels);

/// d(encoding)/d(mu) applied to an upstream gradient; accumulates into dmu.
void encode_position_backward(const Vec3& mu, int levels, const double* dout, Vec3& dmu);

/// Layout [t | sin(2^0 t) | cos(2^0 t) | ... ], 2*levels+1 entries.
void encode_time(double t, int levels, double* out);
VecX encode_time(double t, int levels);

/// Two-layer perceptron gamma_t -> e_t; relu between the layers.
struct TimeProjector {
  Mlp mlp;
  int in_dim() const { return mlp.in_dim(); }
  int out_dim() const { return mlp.out_dim(); }
};

TimeProjector make_time_projector(ParamStore& store, const std::string& prefix,
                                  const EncodingConfig& config);

/// e_t = W2 relu(W1 gamma_t + b1) + b2. ShapeMismatch on wrong input width.
VecX embed_time(const VecX& gamma_t, const TimeProjector& projector);

/// Depth-`depth` perceptron over [feat, gamma_p, e_t], hidden width D_h.
struct FeatureNet {
  Mlp mlp;
  int feature_dim = 0;
  int position_dim = 0;
  int time_dim = 0;
};

FeatureNet make_feature_net(ParamStore& store, const std::string& prefix, int feature_dim,
                            const EncodingConfig& config, int hidden_dim, int depth);

/// Concatenates exactly [feat, gamma_p, e_t] and runs the net.
VecX build_hidden(const VecX& feat, const VecX& gamma_p, const VecX& e_t, const FeatureNet& net);

}  // namespace dego
