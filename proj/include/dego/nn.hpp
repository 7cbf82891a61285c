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

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dego/common.hpp"

namespace dego {

/// Named parameter array with a matching gradient buffer.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Owns all trainable tensors; iteration order is the lexicographic name
/// order, which fixes the optimizer, clipping, and checkpoint layouts.
class ParamStore {
 public:
  Tensor& create(const std::string& name, const std::vector<int>& shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  void zero_grad();
  int64_t total_size() const;
  uint64_t value_digest() const;

  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Affine map y = W x + b with W stored row-major [out, in].
struct Linear {
  Tensor* W = nullptr;
  Tensor* b = nullptr;

  int in_dim() const { return W->shape[1]; }
  int out_dim() const { return W->shape[0]; }

  void forward(const double* x, double* y) const;
  /// Accumulates parameter grads; dx may be null. `accumulate_dx` adds into
  /// dx instead of overwriting.
  void backward(const double* x, const double* dy, double* dx, bool accumulate_dx = false) const;
};

Linear make_linear(ParamStore& store, const std::string& name, int in, int out);

/// Uniform +-1/sqrt(fan_in) weights for a [out, in] tensor.
void init_uniform_fanin(Tensor& W, std::mt19937_64& rng);

/// Dense perceptron with relu between layers (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }
  int depth() const { return static_cast<int>(layers.size()); }

  /// Widths of every activation slot: input, then each layer output.
  std::vector<int> slot_dims() const;

  /// `trace` must point to slot_dims() buffers when backward is needed;
  /// trace[0] receives a copy of the input, trace[k] the output of layer k
  /// (post-relu for all but the last layer).
  void forward(const double* x, double* y, std::vector<std::vector<double>>* trace = nullptr) const;

  /// Pointer-based variant for arena storage: slots[k] must hold the
  /// activations produced by forward_slots.
  void forward_slots(const double* x, double** slots) const;
  void backward_slots(double* const* slots, const double* dy, double* dx,
                      bool accumulate_dx = false) const;

  void backward(const std::vector<std::vector<double>>& trace, const double* dy, double* dx,
                bool accumulate_dx = false) const;
};

Mlp make_mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& dims);

void init_mlp_uniform(Mlp& mlp, std::mt19937_64& rng);
void init_linear_zero(Linear& layer);

}  // namespace dego
