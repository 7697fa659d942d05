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

#include "gcdkit/routeconstraint.hpp"

#include <spdlog/spdlog.h>

namespace gcdkit {

void ConstraintWeights::validate() const {
  if (!(alpha >= 0 && beta >= 0)) throw ValidationError("constraint: alpha and beta must be >= 0");
  if (!(route_temperature > 0)) throw ValidationError("constraint: route temperature must be > 0");
  if (!(target_smoothing >= 0 && target_smoothing < 1)) {
    throw ValidationError("constraint: target smoothing must lie in [0, 1)");
  }
}

TargetDistributions TargetDistributions::make(int experts, std::span<const int> old_group,
                                              std::span<const int> new_group) {
  if (experts < 1) throw ValidationError("targets: need at least one expert");
  TargetDistributions t;
  t.uniform = Vector::Constant(experts, 1.0 / experts);
  t.old_target = Vector::Zero(experts);
  t.new_target = Vector::Zero(experts);
  if (old_group.empty() || new_group.empty()) {
    throw ValidationError("targets: both expert groups must be non-empty");
  }
  for (int e : old_group) t.old_target(e) = 1.0 / static_cast<double>(old_group.size());
  for (int e : new_group) t.new_target(e) = 1.0 / static_cast<double>(new_group.size());
  return t;
}

TargetDistributions TargetDistributions::smoothed(double delta) const {
  TargetDistributions t = *this;
  t.old_target = (1.0 - delta) * old_target + delta * uniform;
  t.new_target = (1.0 - delta) * new_target + delta * uniform;
  return t;
}

Tensor pool_sample_route(const Tensor& token_weights, Index tokens, double tau_g) {
  if (!(tau_g > 0)) throw ValidationError("pool_sample_route: temperature must be > 0");
  if (tokens < 1) throw ValidationError("pool_sample_route: need at least one token");
  return softmax(segment_mean(token_weights, tokens), tau_g);
}

Tensor balanced_assignment_loss(std::span<const Tensor> pooled) {
  if (pooled.empty()) throw ValidationError("balanced_assignment_loss: no adapted blocks");
  Tensor total;
  for (const auto& probs : pooled) {
    if (probs.rows() == 0) throw ValidationError("balanced_assignment_loss: empty batch");
    const Index t = probs.cols();
    Tensor kl = kl_divergence(col_mean(probs), Vector::Constant(t, 1.0 / static_cast<double>(t)));
    total = total.defined() ? add(total, kl) : kl;
  }
  return total;
}

std::vector<int> pseudo_labels(const Matrix& predictions, std::span<const int> labels,
                               std::span<const std::uint8_t> labeled) {
  const auto n = static_cast<std::size_t>(predictions.rows());
  if (labels.size() != n || labeled.size() != n) {
    throw ValidationError("pseudo_labels: label/mask length must equal batch size");
  }
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labeled[i]) {
      out[i] = labels[i];
      continue;
    }
    Index best = 0;
    // Strict comparison keeps the lowest index on ties.
    for (Index k = 1; k < predictions.cols(); ++k) {
      if (predictions(static_cast<Index>(i), k) > predictions(static_cast<Index>(i), best)) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

RouteStats conditioned_route_means(std::span<const Tensor> pooled, std::span<const int> blocks,
                                   std::span<const int> pseudo, const std::set<int>& old_classes) {
  if (blocks.size() != pooled.size()) throw ValidationError("conditioned_route_means: block ids mismatch");
  std::vector<Index> old_rows, new_rows;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    (old_classes.count(pseudo[i]) ? old_rows : new_rows).push_back(static_cast<Index>(i));
  }
  RouteStats stats;
  for (std::size_t l = 0; l < pooled.size(); ++l) {
    if (pooled[l].rows() != static_cast<Index>(pseudo.size())) {
      throw ValidationError("conditioned_route_means: pseudo-label count differs from batch");
    }
    BlockRouteStats s;
    s.block = blocks[l];
    s.mean = col_mean(pooled[l]);
    s.old_count = static_cast<int>(old_rows.size());
    s.new_count = static_cast<int>(new_rows.size());
    if (!old_rows.empty()) s.old_mean = col_mean(gather_rows(pooled[l], old_rows));
    if (!new_rows.empty()) s.new_mean = col_mean(gather_rows(pooled[l], new_rows));
    stats.push_back(std::move(s));
  }
  if (old_rows.empty() || new_rows.empty()) {
    spdlog::debug("conditioned_route_means: {} group empty this batch, its term is skipped",
                  old_rows.empty() ? "old" : "new");
  }
  return stats;
}

Tensor category_balanced_loss(const RouteStats& stats, const TargetDistributions& targets) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& s : stats) {
    if (s.old_mean) total = add(total, kl_divergence(*s.old_mean, targets.old_target));
    if (s.new_mean) total = add(total, kl_divergence(*s.new_mean, targets.new_target));
  }
  return total;
}

RouteAssignmentLoss route_assignment_loss(std::span<const Tensor> pooled, std::span<const int> blocks,
                                          std::span<const int> pseudo, const std::set<int>& old_classes,
                                          const TargetDistributions& targets, const ConstraintWeights& weights) {
  weights.validate();
  RouteAssignmentLoss out;
  out.balanced = balanced_assignment_loss(pooled);
  out.stats = conditioned_route_means(pooled, blocks, pseudo, old_classes);
  out.category = category_balanced_loss(out.stats, targets.smoothed(weights.target_smoothing));
  out.total = add(scale(out.balanced, weights.beta), scale(out.category, weights.alpha));
  return out;
}

}  // namespace gcdkit
