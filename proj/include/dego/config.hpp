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

#include <string>

#include "dego/objective.hpp"

namespace dego {

/// Strict parse: unknown keys are rejected (UnknownKey names the key path),
/// wrong types raise TypeError, missing keys take the documented defaults.
Config parse_config_file(const std::string& path);
Config parse_config_json(const std::string& json_text);

/// Canonical JSON (sorted keys, full precision); basis of the config digest.
std::string config_to_json(const Config& cfg);

uint64_t config_digest(const Config& cfg);

}  // namespace dego
