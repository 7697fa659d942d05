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

#include <functional>
#include <string>
#include <vector>

#include "gcdkit/harness/model.hpp"

namespace gcdkit {

struct GroupCheck {
  std::string name;
  std::int64_t entries = 0;
  double max_rel_error = 0;
  bool skipped = false;  // frozen or absent
  bool passed = true;
  std::int64_t refined = 0;  // entries that needed a smaller step
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Denominator floor of |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Retries of a failing entry, each at a tenth of the previous step.
  int refinements = 2;
  /// Test hook: edits the analytic gradients before comparison.
  std::function<void(std::vector<NamedTensor>&)> corrupt;
};

/// Analytic vs central-difference gradients of the full step objective, per
/// group (experts, router, prototypes, projection_head, backbone). Teacher
/// targets and pseudo-labels are held fixed; zero-initialized adapter
/// weights are randomized first so every path carries gradient.
GradCheckReport grad_check(const RunConfig& config, const GradCheckOptions& options = {});

/// All dims <= 8.
void require_tiny(const RunConfig& config);

}  // namespace gcdkit
