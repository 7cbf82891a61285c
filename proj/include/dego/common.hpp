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
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>

namespace dego {

enum class ErrorKind {
  NonPositiveSize,
  NonDivisibleExtent,
  DegenerateQuaternion,
  ShapeMismatch,
  PayloadShapeMismatch,
  SpecMismatch,
  NonFinite,
  NonFiniteGradient,
  NonFiniteValue,
  BadMagic,
  TruncatedFile,
  MissingGroundTruth,
  MissingFile,
  UnknownKey,
  TypeError,
  IoError,
  IndexOutOfRange,
  DigestMismatch,
  OutOfGrid,
  NonUnitDirection,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const { return kind_; }
  /// Process exit code class: 2 config, 3 data, 4 numerical.
  int exit_code() const;

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

inline void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) raise(kind, message);
}

// ---- worker-thread control -------------------------------------------------
// threads == 1 selects the serial reference path in every kernel.

void set_num_threads(int n);  // n <= 0 restores hardware concurrency
int num_threads();

// ---- logging (DEGO_LOG in {error, info, debug}) ----------------------------

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level();
void log_message(LogLevel level, const std::string& message);

inline void log_error(const std::string& m) { log_message(LogLevel::kError, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::kInfo, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::kDebug, m); }

// ---- deterministic randomness ----------------------------------------------
// mt19937_64 output is fully specified, so these helpers are reproducible
// across platforms, unlike std::uniform_real_distribution.

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal via Box-Muller on the deterministic uniform.
double normal01(std::mt19937_64& rng);

// ---- little-endian binary IO -----------------------------------------------

void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, const void* data, size_t n);

uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
void read_bytes(std::istream& is, void* data, size_t n);  // TruncatedFile on EOF

// ---- hashing ----------------------------------------------------------------

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = kFnvOffset);
std::string hex64(uint64_t v);

}  // namespace dego
