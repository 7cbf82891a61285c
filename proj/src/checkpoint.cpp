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
#include "dego/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dego {

namespace {

constexpr char kCkptMagic[10] = {'D', 'E', 'G', 'O', '-', 'C', 'K', 'P', 'T', '1'};

void write_tensor(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                  const double* data, size_t count) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
  for (size_t i = 0; i < count; ++i) write_f64(os, data[i]);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, uint64_t step,
                     const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::IoError, "cannot open for write: " + path);
  write_bytes(os, kCkptMagic, sizeof(kCkptMagic));
  write_u32(os, 1);
  write_u64(os, step);

  auto tensors = store.all();
  write_u32(os, static_cast<uint32_t>(tensors.size()) + 2);
  for (const Tensor* t : tensors)
    write_tensor(os, t->name, t->shape, t->value.data(), t->value.size());

  // The run config travels with the parameters: bytes as doubles plus digest.
  std::vector<double> bytes(config_json.size());
  for (size_t i = 0; i < config_json.size(); ++i)
    bytes[i] = static_cast<double>(static_cast<unsigned char>(config_json[i]));
  write_tensor(os, "meta/config_json", {static_cast<int>(std::max<size_t>(1, bytes.size()))},
               bytes.empty() ? std::vector<double>{0.0}.data() : bytes.data(),
               std::max<size_t>(1, bytes.size()));
  uint64_t digest = fnv1a64(config_json.data(), config_json.size());
  double digest_bits;
  std::memcpy(&digest_bits, &digest, 8);
  write_tensor(os, "meta/config_digest", {1}, &digest_bits, 1);
  require(os.good(), ErrorKind::IoError, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::MissingFile, path);
  char magic[sizeof(kCkptMagic)];
  read_bytes(is, magic, sizeof(kCkptMagic));
  require(std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) == 0, ErrorKind::BadMagic, path);
  uint32_t version = read_u32(is);
  require(version == 1, ErrorKind::BadMagic, "unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.step = read_u64(is);
  uint32_t count = read_u32(is);
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t name_len = read_u32(is);
    require(name_len < 4096, ErrorKind::TruncatedFile, "implausible tensor name length");
    std::string name(name_len, '\0');
    read_bytes(is, name.data(), name_len);
    uint32_t rank = read_u32(is);
    require(rank <= 8, ErrorKind::TruncatedFile, "implausible tensor rank");
    Tensor t;
    t.name = name;
    int64_t total = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      int d = static_cast<int>(read_u32(is));
      t.shape.push_back(d);
      total *= d;
    }
    t.value.resize(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) t.value[i] = read_f64(is);
    t.grad.assign(t.value.size(), 0.0);
    ckpt.tensors.emplace(name, std::move(t));
  }

  auto it = ckpt.tensors.find("meta/config_json");
  if (it != ckpt.tensors.end()) {
    std::string json;
    json.reserve(it->second.value.size());
    for (double b : it->second.value) {
      int c = static_cast<int>(b);
      if (c != 0) json.push_back(static_cast<char>(c));
    }
    ckpt.config_json = std::move(json);
    ckpt.tensors.erase(it);
  }
  it = ckpt.tensors.find("meta/config_digest");
  if (it != ckpt.tensors.end()) {
    std::memcpy(&ckpt.config_digest, it->second.value.data(), 8);
    ckpt.tensors.erase(it);
  }
  require(ckpt.config_json.empty() ||
              fnv1a64(ckpt.config_json.data(), ckpt.config_json.size()) == ckpt.config_digest,
          ErrorKind::DigestMismatch, "checkpoint config digest mismatch");
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStore& store) {
  for (Tensor* t : store.all()) {
    auto it = ckpt.tensors.find(t->name);
    require(it != ckpt.tensors.end(), ErrorKind::ShapeMismatch,
            "checkpoint lacks tensor: " + t->name);
    require(it->second.shape == t->shape, ErrorKind::ShapeMismatch,
            "checkpoint tensor shape mismatch: " + t->name);
    t->value = it->second.value;
  }
}

}  // namespace dego
