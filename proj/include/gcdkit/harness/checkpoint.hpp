// Copyright 2026 The gcdkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "gcdkit/harness/model.hpp"

namespace gcdkit {

struct CheckpointRecord {
  std::int64_t step = 0;
  std::string config_hash;
  std::map<std::string, double> metrics;
};

/// `<stem>.txt` manifest (step, config hash, metrics, embedded config,
/// parameter table) and `<stem>.bin` with the trainable parameters as
/// little-endian float64. The frozen backbone is rebuilt from its seed.
void save_checkpoint(const Model& model, const CheckpointRecord& record, const std::filesystem::path& stem);

/// Rebuilds the model from the embedded config and restores every trainable
/// tensor bit for bit.
Model load_checkpoint(const std::filesystem::path& stem, CheckpointRecord* record = nullptr);

}  // namespace gcdkit
