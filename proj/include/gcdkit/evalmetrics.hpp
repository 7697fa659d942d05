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
#include <ostream>
#include <set>
#include <span>
#include <vector>

#include "gcdkit/numkernel/tensor.hpp"

namespace gcdkit {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// counts(predicted cluster, true class); always square, zero-padded.
struct ConfusionMatrix {
  CountMatrix counts;

  /// `min_size` pads beyond the largest id seen (typically K).
  static ConfusionMatrix from(std::span<const int> predictions, std::span<const int> truths, int min_size = 0);
  int size() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
};

struct PermutationAssignment {
  std::vector<int> mapping;  // predicted cluster -> class
  std::int64_t matched = 0;
};

/// Maximum-weight bijection (Hungarian on negated counts). Among optimal
/// bijections the lexicographically smallest mapping is returned.
PermutationAssignment optimal_permutation(const ConfusionMatrix& cm);

/// Minimum-cost assignment of rows to columns of a square matrix.
std::vector<int> hungarian_min_cost(const CountMatrix& cost);

struct AccuracyReport {
  std::optional<double> acc_all, acc_old, acc_new;  // absent when the subset is empty
  std::int64_t n_all = 0, n_old = 0, n_new = 0;
  PermutationAssignment assignment;
  ConfusionMatrix confusion;
};

/// One permutation matched on every sample, then applied to the old-class
/// and new-class subsets.
AccuracyReport gcd_accuracy(std::span<const int> predictions, std::span<const int> truths,
                            const std::set<int>& old_classes, int num_classes = 0);

/// {acc_all, acc_old, acc_new, n_old, n_new}; absent accuracies are null.
void write_metrics_json(const AccuracyReport& report, const std::filesystem::path& path);

/// Header "predicted,true_0,...,true_{K-1}", one row per predicted cluster.
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);

/// Per-block pooled routes of one evaluation pass, [N x T].
struct BlockRoutes {
  int block = 0;
  Matrix pooled;
};

/// Columns block,group,expert_id,mean_weight with groups old, new, all
/// (P * T * 3 rows). Groups follow the pseudo-labels; an empty group writes
/// nan.
void write_route_report(std::ostream& out, std::span<const BlockRoutes> routes, std::span<const int> pseudo,
                        const std::set<int>& old_classes);

}  // namespace gcdkit
