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
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gcdkit/evalmetrics.hpp"
#include "gcdkit/harness/config.hpp"

namespace gcdkit {

/// Frozen backbone plus every tunable piece of one run.
struct Model {
  RunConfig config;
  BackboneParams backbone;
  std::optional<MultiExpertAdapter> adapter;
  ProjectionHead head;
  Prototypes prototypes;
  std::set<int> old_classes;
  std::optional<TargetDistributions> targets;  // present when the run routes

  /// Backbone from backbone.seed; adapter, head and prototypes from run.seed.
  static Model build(const RunConfig& config, int num_classes, std::set<int> old_classes);

  const MultiExpertAdapter* adapter_ptr() const { return adapter ? &*adapter : nullptr; }
  std::vector<NamedTensor> trainable() const;
  std::vector<NamedTensor> frozen() const;
  /// adapter + prototypes + projection head (+ an unfrozen backbone block).
  std::int64_t tunable_count() const;
};

/// Scalar components of one step, as logged.
struct StepLosses {
  double rep_u = 0, rep_s = 0, cls_u = 0, cls_s = 0, ba = 0, cba = 0, total = 0;
};

struct StepOutput {
  Tensor total;  // L_sgcd + L_ra
  StepLosses losses;
  SimGcdResult sgcd;
  std::vector<int> blocks;          // adapted block ids
  std::vector<Tensor> token_routes;  // per adapted block, view 1
  std::vector<Tensor> pooled;        // per adapted block, view 1
  std::vector<int> pseudo;
  std::optional<RouteAssignmentLoss> route_loss;
};

/// Forward of both views and the full objective. The route constraint reads
/// view 1. Frozen targets / pseudo-labels replace the computed ones.
StepOutput step_loss(const Model& model, const BatchViews& batch, const Tensor* frozen_targets = nullptr,
                     const std::vector<int>* frozen_pseudo = nullptr);

/// SGD with momentum; weight decay skips the prototypes.
class Sgd {
 public:
  Sgd(std::vector<NamedTensor> params, const OptimizerConfig& config);

  void zero_grad();
  void step(double lr);

 private:
  std::vector<NamedTensor> params_;
  std::vector<Matrix> velocity_;
  std::vector<bool> decay_;
  double momentum_;
  double weight_decay_;
};

/// Prediction and routing over a sample set without augmentation.
struct EvalPass {
  std::vector<int> ids;
  std::vector<int> predictions;
  std::vector<int> truths;
  std::vector<int> pseudo;  // predictions, or truths under oracle labels
  std::vector<BlockRoutes> routes;
  AccuracyReport report;
};

EvalPass evaluate_samples(const Model& model, std::span<const Sample* const> samples, int batch_size = 64);
/// On D^u, the GCD protocol.
EvalPass evaluate_unlabeled(const Model& model, const GcdSplit& split);

}  // namespace gcdkit
