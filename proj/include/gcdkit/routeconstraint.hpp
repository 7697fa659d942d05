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
#include <span>
#include <vector>

#include "gcdkit/numkernel/ops.hpp"

namespace gcdkit {

struct ConstraintWeights {
  double alpha = 0.1;                // L_cba
  double beta = 0.1;                 // L_ba
  double route_temperature = 0.1;    // tau_g, token pooling
  double target_smoothing = 1e-6;    // delta mixed into the group targets

  void validate() const;
};

/// Route statistics of one adapted block over a mini-batch.
struct BlockRouteStats {
  int block = 0;
  Tensor mean;                    // omega_l, [1 x T]
  std::optional<Tensor> old_mean;  // over pseudo-old samples
  std::optional<Tensor> new_mean;  // over pseudo-new samples
  int old_count = 0;
  int new_count = 0;
};

using RouteStats = std::vector<BlockRouteStats>;

/// Uniform, old-group and new-group target distributions over T experts.
struct TargetDistributions {
  Vector uniform;
  Vector old_target;
  Vector new_target;

  static TargetDistributions make(int experts, std::span<const int> old_group, std::span<const int> new_group);
  /// (1 - delta) * I^g + delta * uniform for both group targets.
  TargetDistributions smoothed(double delta) const;
};

/// softmax(mean_v(token weights) / tau_g) per sample.
///
/// token_weights: [(batch * tokens) x T], sample-major. Returns [batch x T].
Tensor pool_sample_route(const Tensor& token_weights, Index tokens, double tau_g);

/// sum_l D_KL(mean_i omega_{l,i} || uniform).
Tensor balanced_assignment_loss(std::span<const Tensor> pooled);

/// Ground truth for labeled samples, argmax of the prediction otherwise
/// (lowest index wins ties).
std::vector<int> pseudo_labels(const Matrix& predictions, std::span<const int> labels,
                               std::span<const std::uint8_t> labeled);

/// Batch mean plus means conditioned on the pseudo-label being old/new.
/// Pseudo-labels enter as constants.
RouteStats conditioned_route_means(std::span<const Tensor> pooled, std::span<const int> blocks,
                                   std::span<const int> pseudo, const std::set<int>& old_classes);

/// sum_l [D_KL(omega_old || I_old) + D_KL(omega_new || I_new)]; absent
/// groups contribute zero. Targets should already be smoothed.
Tensor category_balanced_loss(const RouteStats& stats, const TargetDistributions& targets);

struct RouteAssignmentLoss {
  Tensor total;  // beta * L_ba + alpha * L_cba
  Tensor balanced;
  Tensor category;
  RouteStats stats;
};

RouteAssignmentLoss route_assignment_loss(std::span<const Tensor> pooled, std::span<const int> blocks,
                                          std::span<const int> pseudo, const std::set<int>& old_classes,
                                          const TargetDistributions& targets, const ConstraintWeights& weights);

}  // namespace gcdkit
