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
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gcdkit/objectives.hpp"

namespace gcdkit {

/// Synthetic GCD dataset description.
///
/// Class archetypes are Gaussian token sequences with per-entry standard
/// deviation `separation`; samples add per-entry Gaussian noise of `noise`.
/// Classes [0, old_classes) are old.
struct DatasetSpec {
  int num_classes = 10;
  int old_classes = 5;
  double labeled_fraction = 0.5;
  int samples_per_class = 20;  // largest class when long-tailed
  int token_count = 8;
  int feature_dim = 64;
  double separation = 1.0;
  double noise = 0.1;
  double imbalance = 1.0;  // largest / smallest class size; 1 = balanced
  std::uint64_t seed = 1;

  void validate() const;
  std::vector<int> class_sizes() const;

  static DatasetSpec desk() { return {}; }
  /// 80% of classes old.
  static DatasetSpec cifar100_style(int num_classes = 10);
  /// Geometric class sizes.
  static DatasetSpec long_tailed(int num_classes = 10, double imbalance = 10.0);
};

struct Sample {
  int id = 0;
  Matrix tokens;  // [token_count x feature_dim]
  int label = 0;  // ground truth, hidden from training unless `labeled`
  bool labeled = false;
};

struct GcdSplit {
  DatasetSpec spec;
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::set<int> old_classes;
  std::set<int> new_classes;
  std::set<int> all_classes;

  std::size_t size() const { return labeled.size() + unlabeled.size(); }
  /// Labeled followed by unlabeled.
  std::vector<const Sample*> all() const;
  void validate() const;
};

GcdSplit generate(const DatasetSpec& spec);

/// Two independent perturbations of one sample: additive Gaussian noise of
/// std `strength` followed by replacing each token with the sample's token
/// mean with probability min(0.5, 0.2 * strength).
std::pair<Matrix, Matrix> augment_two_views(const Sample& sample, double strength, std::uint64_t seed);

/// Sample order of one epoch. A trailing batch of one sample is merged into
/// the batch before it.
std::vector<std::vector<const Sample*>> epoch_batches(const GcdSplit& split, int batch_size,
                                                      std::uint64_t epoch_seed);

/// Stacks the samples' two augmented views into a BatchViews.
BatchViews make_batch_views(std::span<const Sample* const> samples, double strength, std::uint64_t seed);

/// Shuffled stream of augmented batches covering every sample once.
class BatchStream {
 public:
  BatchStream(const GcdSplit& split, int batch_size, std::uint64_t epoch_seed, double strength);

  std::optional<BatchViews> next();
  std::size_t batch_count() const { return batches_.size(); }

 private:
  std::vector<std::vector<const Sample*>> batches_;
  std::size_t cursor_ = 0;
  std::uint64_t seed_;
  double strength_;
};

/// Stacks token matrices without augmentation, [(n * tokens) x dim].
Matrix stack_tokens(std::span<const Sample* const> samples);

/// .gcd file: text header terminated by "end_header\n", then little-endian
/// records of int32 id, int32 label, int32 labeled flag and
/// token_count * feature_dim float64 values (row-major).
void save_dataset(const GcdSplit& split, const std::filesystem::path& path);
GcdSplit load_dataset(const std::filesystem::path& path);

}  // namespace gcdkit
