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

#include "gcdkit/backbone.hpp"

#include "gcdkit/mea.hpp"
#include "gcdkit/numkernel/random.hpp"

namespace gcdkit {

namespace {

constexpr double kInitStd = 0.02;

Tensor weight(Index rows, Index cols, Rng& rng, bool trainable) {
  return Tensor(gaussian_matrix(rows, cols, kInitStd, rng), trainable);
}
Tensor zeros_row(Index cols, bool trainable) { return Tensor(Matrix::Zero(1, cols), trainable); }
Tensor ones_row(Index cols, bool trainable) { return Tensor(Matrix::Ones(1, cols), trainable); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul_nt(x, w), b); }

}  // namespace

void BackboneConfig::validate() const {
  if (num_blocks < 1) throw ValidationError("backbone: num_blocks must be >= 1");
  if (embed_dim < 1 || num_heads < 1) throw ValidationError("backbone: embed_dim and num_heads must be >= 1");
  if (embed_dim % num_heads != 0) {
    throw ValidationError("backbone: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
  }
  if (token_count < 1 || input_dim < 1 || mlp_hidden < 1) {
    throw ValidationError("backbone: token_count, input_dim and mlp_hidden must be >= 1");
  }
}

BackboneConfig BackboneConfig::vit_b16() {
  BackboneConfig c;
  c.num_blocks = 12;
  c.embed_dim = 768;
  c.num_heads = 12;
  c.token_count = 196;
  c.input_dim = 16 * 16 * 3;
  c.mlp_hidden = 3072;
  return c;
}

Tensor FeedForward::mlp(const Tensor& normalized) const {
  return linear(gelu(linear(normalized, fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
}

std::vector<NamedTensor> BlockParams::named(const std::string& prefix) const {
  return {{prefix + "norm1.gain", norm1_gain},   {prefix + "norm1.bias", norm1_bias},
          {prefix + "attn.qkv.weight", qkv_weight}, {prefix + "attn.qkv.bias", qkv_bias},
          {prefix + "attn.proj.weight", proj_weight}, {prefix + "attn.proj.bias", proj_bias},
          {prefix + "norm2.gain", ffn.norm_gain}, {prefix + "norm2.bias", ffn.norm_bias},
          {prefix + "mlp.fc1.weight", ffn.fc1_weight}, {prefix + "mlp.fc1.bias", ffn.fc1_bias},
          {prefix + "mlp.fc2.weight", ffn.fc2_weight}, {prefix + "mlp.fc2.bias", ffn.fc2_bias}};
}

std::vector<NamedTensor> EmbeddingParams::named() const {
  return {{"backbone.patch.weight", patch_weight}, {"backbone.patch.bias", patch_bias},
          {"backbone.cls_token", class_token},     {"backbone.pos_embed", position},
          {"backbone.norm.gain", norm_gain},       {"backbone.norm.bias", norm_bias}};
}

std::vector<NamedTensor> BackboneParams::named() const {
  auto out = embedding.named();
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto block = blocks[l].named("backbone.blocks." + std::to_string(l) + ".");
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

BackboneParams init_backbone(const BackboneConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, {0xBAC4B0AEu});
  const Index d = config.embed_dim;
  BackboneParams p;
  auto& e = p.embedding;
  e.patch_weight = weight(d, config.input_dim, rng, false);
  e.patch_bias = zeros_row(d, false);
  e.class_token = weight(1, d, rng, false);
  e.position = weight(config.sequence_length(), d, rng, false);
  e.norm_gain = ones_row(d, false);
  e.norm_bias = zeros_row(d, false);
  for (int l = 0; l < config.num_blocks; ++l) {
    const bool trainable = config.unfreeze_last_block && l == config.num_blocks - 1;
    BlockParams b;
    b.norm1_gain = ones_row(d, trainable);
    b.norm1_bias = zeros_row(d, trainable);
    b.qkv_weight = weight(3 * d, d, rng, trainable);
    b.qkv_bias = zeros_row(3 * d, trainable);
    b.proj_weight = weight(d, d, rng, trainable);
    b.proj_bias = zeros_row(d, trainable);
    b.ffn.norm_gain = ones_row(d, trainable);
    b.ffn.norm_bias = zeros_row(d, trainable);
    b.ffn.fc1_weight = weight(config.mlp_hidden, d, rng, trainable);
    b.ffn.fc1_bias = zeros_row(config.mlp_hidden, trainable);
    b.ffn.fc2_weight = weight(d, config.mlp_hidden, rng, trainable);
    b.ffn.fc2_bias = zeros_row(d, trainable);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

ForwardTrace encode(const Tensor& tokens, int batch, const BackboneParams& params,
                    const BackboneConfig& config, const MultiExpertAdapter* adapters,
                    std::vector<Matrix>* last_block_attention) {
  const Index d = config.embed_dim;
  const Index seq = config.sequence_length();
  if (batch < 1 || tokens.rows() != static_cast<Index>(batch) * config.token_count ||
      tokens.cols() != config.input_dim) {
    throw ValidationError("encode: expected [" + std::to_string(batch * config.token_count) + " x " +
                          std::to_string(config.input_dim) + "] tokens, got " +
                          shape_string(tokens.shape()));
  }
  if (params.blocks.size() != static_cast<std::size_t>(config.num_blocks)) {
    throw ValidationError("encode: parameter block count does not match config");
  }
  if (adapters && adapters->config().adapted_blocks > config.num_blocks) {
    throw ValidationError("encode: adapter P = " + std::to_string(adapters->config().adapted_blocks) +
                          " exceeds L = " + std::to_string(config.num_blocks));
  }

  ForwardTrace trace;
  trace.batch = batch;
  trace.sequence_length = static_cast<int>(seq);
  trace.route_weights.resize(static_cast<std::size_t>(config.num_blocks));

  const auto& e = params.embedding;
  Tensor x = linear(tokens, e.patch_weight, e.patch_bias);
  x = prepend_to_groups(x, e.class_token, config.token_count);
  x = add_tiled(x, e.position);

  for (int l = 0; l < config.num_blocks; ++l) {
    const auto& b = params.blocks[static_cast<std::size_t>(l)];
    Tensor qkv = linear(layer_norm(x, b.norm1_gain, b.norm1_bias), b.qkv_weight, b.qkv_bias);
    std::vector<Matrix>* maps = (last_block_attention && l == config.num_blocks - 1) ? last_block_attention : nullptr;
    Tensor attn = multi_head_attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, d), slice_cols(qkv, 2 * d, d),
                                       seq, config.num_heads, maps);
    Tensor pre_ffn = add(x, linear(attn, b.proj_weight, b.proj_bias));
    trace.pre_ffn.push_back(pre_ffn);
    if (adapters && adapters->adapts(l)) {
      auto adapted = adapters->forward(l, pre_ffn, b.ffn);
      trace.route_weights[static_cast<std::size_t>(l)] = adapted.route_weights;
      x = adapted.output;
    } else {
      x = add(b.ffn.mlp(b.ffn.normalize(pre_ffn)), pre_ffn);
    }
  }

  std::vector<Index> cls_rows(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) cls_rows[static_cast<std::size_t>(i)] = static_cast<Index>(i) * seq;
  trace.features = layer_norm(gather_rows(x, std::move(cls_rows)), e.norm_gain, e.norm_bias);
  return trace;
}

Matrix patchify(const Matrix& image, int patch) {
  if (patch < 1 || image.rows() % patch != 0 || image.cols() % patch != 0) {
    throw ValidationError("patchify: image extents must be multiples of the patch size");
  }
  const Index ph = image.rows() / patch;
  const Index pw = image.cols() / patch;
  Matrix out(ph * pw, static_cast<Index>(patch) * patch);
  for (Index i = 0; i < ph; ++i) {
    for (Index j = 0; j < pw; ++j) {
      Matrix block = image.block(i * patch, j * patch, patch, patch);
      out.row(i * pw + j) = Eigen::Map<const Vector>(block.data(), block.size());
    }
  }
  return out;
}

}  // namespace gcdkit
