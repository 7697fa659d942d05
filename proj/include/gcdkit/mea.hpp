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
#include <ostream>
#include <span>
#include <vector>

#include "gcdkit/backbone.hpp"

namespace gcdkit {

/// Multi-expert adapter hyperparameters.
struct MeaConfig {
  int experts = 4;            // T
  int bottleneck = 16;        // d-hat
  double scale = 0.4;         // s
  int adapted_blocks = 3;     // P, counted from the top
  double router_temperature = 5.0;
  std::vector<int> old_group;  // empty -> first half
  std::vector<int> new_group;  // empty -> second half

  /// Fills empty groups with the first-half / second-half split.
  MeaConfig& resolve_groups();
  void validate(int embed_dim, int num_blocks) const;
};

/// One bottleneck expert: ReLU(x W_down^T + b_down) W_up^T + b_up.
struct ExpertParams {
  Tensor down_weight;  // [d-hat x d]
  Tensor down_bias;    // [1 x d-hat]
  Tensor up_weight;    // [d x d-hat]
  Tensor up_bias;      // [1 x d]
};

struct RouterParams {
  Tensor weight;  // [T x d], no bias
};

/// Per-token route weights over T experts: softmax(x W^T / temperature).
Tensor route(const Tensor& tokens, const RouterParams& router, double temperature);

Tensor expert_forward(const Tensor& tokens, const ExpertParams& expert);

struct AdaptedOutput {
  Tensor output;         // frozen FFN + residual + s * gated experts
  Tensor route_weights;  // [tokens x T]
};

/// FFN(LN(x~)) + x~ + s * sum_t w_t * expert_t(LN(x~)).
///
/// Router and experts both read the normalized token. Without a router
/// (T = 1) the single expert has weight 1.
AdaptedOutput adapted_ffn(const Tensor& pre_ffn, const FeedForward& ffn,
                          std::span<const ExpertParams> experts, const RouterParams* router,
                          const MeaConfig& config);

/// Experts plus router, over all adapted blocks. The router is absent when
/// T = 1.
std::int64_t count_tunable_params(const MeaConfig& config, int embed_dim);

class MultiExpertAdapter {
 public:
  struct Layer {
    std::vector<ExpertParams> experts;
    std::optional<RouterParams> router;
  };

  /// W_down ~ N(0, 0.02^2), everything else zero, so the adapted network
  /// starts exactly at the frozen one.
  static MultiExpertAdapter init(MeaConfig config, int embed_dim, int num_blocks, std::uint64_t seed);

  const MeaConfig& config() const { return config_; }
  int first_adapted_block() const { return num_blocks_ - config_.adapted_blocks; }
  bool adapts(int block) const { return block >= first_adapted_block() && block < num_blocks_; }

  AdaptedOutput forward(int block, const Tensor& pre_ffn, const FeedForward& ffn) const;

  std::span<const Layer> layers() const { return layers_; }
  std::span<Layer> layers() { return layers_; }

  std::vector<NamedTensor> named() const;
  std::vector<NamedTensor> expert_parameters() const;
  std::vector<NamedTensor> router_parameters() const;
  /// Counted by walking the live parameters.
  std::int64_t parameter_count() const;

 private:
  MeaConfig config_;
  int embed_dim_ = 0;
  int num_blocks_ = 0;
  std::vector<Layer> layers_;
};

/// Route dump rows: block,sample_id,expert_id,pooled_weight.
/// `pooled` holds one [batch x T] matrix per adapted block.
void write_route_dump(std::ostream& out, std::span<const int> blocks, std::span<const Matrix> pooled,
                      std::span<const int> sample_ids);

}  // namespace gcdkit
