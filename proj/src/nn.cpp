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
#include "dego/nn.hpp"

#include <cmath>
#include <cstring>

namespace dego {

Tensor& ParamStore::create(const std::string& name, const std::vector<int>& shape) {
  require(!contains(name), ErrorKind::ShapeMismatch, "tensor already exists: " + name);
  Tensor t;
  t.name = name;
  t.shape = shape;
  int64_t n = 1;
  for (int d : shape) {
    require(d > 0, ErrorKind::NonPositiveSize, "tensor dim must be positive: " + name);
    n *= d;
  }
  t.value.assign(static_cast<size_t>(n), 0.0);
  t.grad.assign(static_cast<size_t>(n), 0.0);
  auto [it, ok] = tensors_.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), ErrorKind::ShapeMismatch, "no such tensor: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), ErrorKind::ShapeMismatch, "no such tensor: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (auto& [name, t] : tensors_) n += t.size();
  return n;
}

uint64_t ParamStore::value_digest() const {
  uint64_t h = kFnvOffset;
  for (auto& [name, t] : tensors_) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.value.data(), t.value.size() * sizeof(double), h);
  }
  return h;
}

std::vector<Tensor*> ParamStore::all() {
  std::vector<Tensor*> out;
  out.reserve(tensors_.size());
  for (auto& [name, t] : tensors_) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> ParamStore::all() const {
  std::vector<const Tensor*> out;
  out.reserve(tensors_.size());
  for (auto& [name, t] : tensors_) out.push_back(&t);
  return out;
}

void Linear::forward(const double* x, double* y) const {
  int in = in_dim(), out = out_dim();
  const double* w = W->value.data();
  for (int o = 0; o < out; ++o) {
    double acc = b->value[o];
    const double* row = w + static_cast<int64_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void Linear::backward(const double* x, const double* dy, double* dx, bool accumulate_dx) const {
  int in = in_dim(), out = out_dim();
  const double* w = W->value.data();
  double* gw = W->grad.data();
  double* gb = b->grad.data();
  if (dx != nullptr && !accumulate_dx) std::memset(dx, 0, sizeof(double) * in);
  for (int o = 0; o < out; ++o) {
    double g = dy[o];
    gb[o] += g;
    const double* row = w + static_cast<int64_t>(o) * in;
    double* grow = gw + static_cast<int64_t>(o) * in;
    if (dx != nullptr) {
      for (int i = 0; i < in; ++i) {
        grow[i] += g * x[i];
        dx[i] += g * row[i];
      }
    } else {
      for (int i = 0; i < in; ++i) grow[i] += g * x[i];
    }
  }
}

Linear make_linear(ParamStore& store, const std::string& name, int in, int out) {
  Linear l;
  l.W = &store.create(name + "/weight", {out, in});
  l.b = &store.create(name + "/bias", {out});
  return l;
}

void init_uniform_fanin(Tensor& W, std::mt19937_64& rng) {
  require(W.shape.size() == 2, ErrorKind::ShapeMismatch, "fan-in init needs a matrix");
  double bound = 1.0 / std::sqrt(static_cast<double>(W.shape[1]));
  for (double& v : W.value) v = uniform_range(rng, -bound, bound);
}

std::vector<int> Mlp::slot_dims() const {
  std::vector<int> dims;
  dims.push_back(in_dim());
  for (const Linear& l : layers) dims.push_back(l.out_dim());
  return dims;
}

void Mlp::forward_slots(const double* x, double** slots) const {
  std::memcpy(slots[0], x, sizeof(double) * in_dim());
  int n = depth();
  for (int k = 0; k < n; ++k) {
    layers[k].forward(slots[k], slots[k + 1]);
    if (k + 1 < n) {
      double* a = slots[k + 1];
      int w = layers[k].out_dim();
      for (int i = 0; i < w; ++i) a[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
  }
}

void Mlp::backward_slots(double* const* slots, const double* dy, double* dx,
                         bool accumulate_dx) const {
  int n = depth();
  std::vector<double> cur(dy, dy + out_dim());
  std::vector<double> prev;
  for (int k = n - 1; k >= 0; --k) {
    // relu mask: slots hold post-relu activations, zero entries were clipped.
    if (k + 1 < n) {
      const double* a = slots[k + 1];
      int w = layers[k].out_dim();
      for (int i = 0; i < w; ++i)
        if (a[i] <= 0.0) cur[i] = 0.0;
    }
    if (k == 0) {
      layers[k].backward(slots[k], cur.data(), dx, accumulate_dx);
    } else {
      prev.assign(static_cast<size_t>(layers[k].in_dim()), 0.0);
      layers[k].backward(slots[k], cur.data(), prev.data());
      cur.swap(prev);
    }
  }
}

void Mlp::forward(const double* x, double* y, std::vector<std::vector<double>>* trace) const {
  if (trace == nullptr) {
    std::vector<int> dims = slot_dims();
    std::vector<std::vector<double>> local(dims.size());
    std::vector<double*> ptrs(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) {
      local[i].resize(static_cast<size_t>(dims[i]));
      ptrs[i] = local[i].data();
    }
    forward_slots(x, ptrs.data());
    std::memcpy(y, ptrs.back(), sizeof(double) * out_dim());
    return;
  }
  std::vector<int> dims = slot_dims();
  trace->resize(dims.size());
  std::vector<double*> ptrs(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) {
    (*trace)[i].resize(static_cast<size_t>(dims[i]));
    ptrs[i] = (*trace)[i].data();
  }
  forward_slots(x, ptrs.data());
  std::memcpy(y, ptrs.back(), sizeof(double) * out_dim());
}

void Mlp::backward(const std::vector<std::vector<double>>& trace, const double* dy, double* dx,
                   bool accumulate_dx) const {
  std::vector<double*> ptrs(trace.size());
  for (size_t i = 0; i < trace.size(); ++i)
    ptrs[i] = const_cast<double*>(trace[i].data());
  backward_slots(ptrs.data(), dy, dx, accumulate_dx);
}

Mlp make_mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& dims) {
  require(dims.size() >= 2, ErrorKind::ShapeMismatch, "mlp needs at least one layer");
  Mlp mlp;
  for (size_t k = 0; k + 1 < dims.size(); ++k)
    mlp.layers.push_back(make_linear(store, prefix + "/" + std::to_string(k), dims[k], dims[k + 1]));
  return mlp;
}

void init_mlp_uniform(Mlp& mlp, std::mt19937_64& rng) {
  for (Linear& l : mlp.layers) init_uniform_fanin(*l.W, rng);
}

void init_linear_zero(Linear& layer) {
  std::fill(layer.W->value.begin(), layer.W->value.end(), 0.0);
  std::fill(layer.b->value.begin(), layer.b->value.end(), 0.0);
}

}  // namespace dego
