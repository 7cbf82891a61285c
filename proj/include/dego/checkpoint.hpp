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

#include <map>
#include <string>

#include "dego/nn.hpp"

namespace dego {

// DEGO-CKPT1: magic, u32 version, u64 step, then a count-prefixed list of
// (u32 name length, utf-8 name, u32 rank, u32 dims..., f64 data, little
// endian). The run config travels as the byte-encoded tensor
// "meta/config_json" plus its FNV digest in "meta/config_digest".

void save_checkpoint(const std::string& path, const ParamStore& store, uint64_t step,
                     const std::string& config_json);

struct Checkpoint {
  uint64_t step = 0;
  std::string config_json;
  uint64_t config_digest = 0;
  std::map<std::string, Tensor> tensors;
};

Checkpoint load_checkpoint(const std::string& path);

/// Copies tensor values into an existing store; ShapeMismatch when a tensor
/// is missing or shaped differently.
void apply_checkpoint(const Checkpoint& ckpt, ParamStore& store);

}  // namespace dego
