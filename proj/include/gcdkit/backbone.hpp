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
#include <string>
#include <vector>

#include "gcdkit/numkernel/ops.hpp"

namespace gcdkit {

class MultiExpertAdapter;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Shape of the frozen encoder. Defaults are desk scale.
struct BackboneConfig {
  int num_blocks = 6;
  int embed_dim = 64;
  int num_heads = 4;
  int token_count = 8;  // input tokens per sample, class token excluded
  int input_dim = 64;
  int mlp_hidden = 128;
  std::uint64_t seed = 7;
  bool unfreeze_last_block = false;  // SimGCD-style partial tuning baseline

  void validate() const;
  int sequence_length() const { return token_count + 1; }

  static BackboneConfig desk() { return {}; }
  /// ViT-B/16 extents (224px input, 16px patches).
  static BackboneConfig vit_b16();
};

/// The frozen FFN branch and its layer norm.
struct FeedForward {
  Tensor norm_gain, norm_bias;
  Tensor fc1_weight, fc1_bias;  // [mlp x d], [1 x mlp]
  Tensor fc2_weight, fc2_bias;  // [d x mlp], [1 x d]

  Tensor normalize(const Tensor& x) const { return layer_norm(x, norm_gain, norm_bias); }
  /// MLP applied to already-normalized tokens.
  Tensor mlp(const Tensor& normalized) const;
};

struct BlockParams {
  Tensor norm1_gain, norm1_bias;
  Tensor qkv_weight, qkv_bias;    // [3d x d], [1 x 3d]
  Tensor proj_weight, proj_bias;  // [d x d], [1 x d]
  FeedForward ffn;

  std::vector<NamedTensor> named(const std::string& prefix) const;
};

struct EmbeddingParams {
  Tensor patch_weight, patch_bias;  // [d x input_dim], [1 x d]
  Tensor class_token;               // [1 x d]
  Tensor position;                  // [(V+1) x d]
  Tensor norm_gain, norm_bias;      // final layer norm

  std::vector<NamedTensor> named() const;
};

struct BackboneParams {
  EmbeddingParams embedding;
  std::vector<BlockParams> blocks;

  std::vector<NamedTensor> named() const;
};

/// Per-batch record of an encoder pass.
struct ForwardTrace {
  int batch = 0;
  int sequence_length = 0;
  std::vector<Tensor> pre_ffn;                    // x~_l, one per block
  std::vector<std::optional<Tensor>> route_weights;  // per-token weights, adapted blocks only
  Tensor features;                                 // class-token output after the final norm
};

/// Deterministic stand-in for pretrained weights: N(0, 0.02^2) weights, zero
/// biases, unit norm gains. Everything is frozen unless the config asks for
/// the last block to be tunable.
BackboneParams init_backbone(const BackboneConfig& config);

/// Pre-norm transformer forward.
///
/// tokens: [(batch * token_count) x input_dim], sample-major. When `adapters`
/// is given, the last P blocks route their FFN through it.
ForwardTrace encode(const Tensor& tokens, int batch, const BackboneParams& params,
                    const BackboneConfig& config, const MultiExpertAdapter* adapters = nullptr,
                    std::vector<Matrix>* last_block_attention = nullptr);

/// Splits an [H x W] image into non-overlapping p x p patches, flattened
/// row-major: [(H/p * W/p) x p*p].
Matrix patchify(const Matrix& image, int patch);

}  // namespace gcdkit
