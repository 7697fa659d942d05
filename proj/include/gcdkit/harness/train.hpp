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
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "gcdkit/harness/model.hpp"

namespace gcdkit {

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  int batch = 0;
  double lr = 0;
  StepLosses losses;
};

struct TrainOptions {
  bool write_outputs = true;
  bool evaluate_each_epoch = true;
  /// Called after backward, before the update.
  std::function<void(const StepRecord&, const StepOutput&, const Model&)> on_step;
  std::function<void(int epoch, const EvalPass&)> on_epoch;
};

struct TrainResult {
  Model model;
  std::int64_t steps = 0;
  StepLosses last;
  EvalPass final_eval;
};

/// Generates the split, or loads data.file and checks it against the backbone.
GcdSplit prepare_split(const RunConfig& config);

/// Under run.out_dir: config.txt, metrics.jsonl, eval.jsonl, routes/ per
/// epoch, and the final report.json, confusion.csv, routes.csv,
/// route_dump.csv and checkpoint.{txt,bin}.
TrainResult train(const RunConfig& config, const GcdSplit& split, const TrainOptions& options = {});

/// One metrics.jsonl line, %.17g doubles, fixed key order.
std::string metrics_line(const StepRecord& record);

/// report.json, confusion.csv, routes.csv and route_dump.csv for one pass.
void write_eval_outputs(const EvalPass& pass, const Model& model, const std::filesystem::path& dir);

}  // namespace gcdkit
