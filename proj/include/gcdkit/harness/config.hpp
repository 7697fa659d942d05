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
#include <string>
#include <vector>

#include "gcdkit/gcddata.hpp"
#include "gcdkit/mea.hpp"
#include "gcdkit/objectives.hpp"
#include "gcdkit/routeconstraint.hpp"

namespace gcdkit {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-5;  // not applied to prototypes
  int epochs = 20;
  int batch_size = 32;

  void validate() const;
};

/// Everything a run depends on. Keys are flat `section.name` strings:
/// backbone.*, mea.*, loss.*, constraint.*, data.*, opt.*, run.*.
struct RunConfig {
  BackboneConfig backbone;
  bool use_adapter = true;
  MeaConfig mea;
  LossWeights loss;
  int head_hidden = 128;
  int proj_dim = 32;
  ConstraintWeights constraint;
  bool oracle_labels = false;  // pseudo-labels from ground truth, diagnostics only
  OptimizerConfig opt;
  DatasetSpec data;            // token_count / feature_dim follow the backbone
  std::string data_file;       // when set, replaces generation
  double augment = 0.1;
  std::uint64_t seed = 0;
  std::string out_dir = "run";

  void validate() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Sorted key=value lines; doubles at full precision.
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

  /// key=value lines; '#' starts a comment. An optional leading
  /// `preset=<name>` resets to that preset unless `allow_preset` is false,
  /// in which case it is ignored.
  void apply(const std::string& text, bool allow_preset = true);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  static RunConfig preset(const std::string& name);
  static const std::vector<std::string>& preset_names();

  DatasetSpec dataset_spec() const;
  /// T > 1 with an adapter; otherwise there is nothing to route.
  bool routes() const { return use_adapter && mea.experts > 1; }
};

std::string read_text(const std::filesystem::path& path);

/// lr(t) = 0.5 * lr0 * (1 + cos(pi * t / total)).
double cosine_lr(double lr0, std::int64_t step, std::int64_t total_steps);

}  // namespace gcdkit
