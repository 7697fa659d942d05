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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcdkit/harness/config.hpp"

namespace gcdkit {

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  int experts = 0;     // 0 without an adapter
  int bottleneck = 0;
  bool balanced = false;  // L_ba on
  bool category = false;  // L_cba on
  std::optional<double> acc_all, acc_old, acc_new;
};

/// baseline-no-adapter, single-adapter, MEA, MEA+L_ba, MEA+L_ba+L_cba.
const std::vector<std::string>& ablation_variants();
RunConfig ablation_config(const RunConfig& base, const std::string& variant);

/// Every variant on the same data, once per seed.
std::vector<AblationRow> ablate(const RunConfig& base, std::span<const std::string> variants,
                                std::span<const std::uint64_t> seeds);

/// Per-seed rows followed by one "mean" row per variant.
void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path);

/// Mean over seeds; rows without a value are ignored.
std::optional<double> mean_acc_new(std::span<const AblationRow> rows, const std::string& variant);

}  // namespace gcdkit
