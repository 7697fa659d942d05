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

#include "gcdkit/mea.hpp"

#include <algorithm>
#include <set>

#include "gcdkit/numkernel/random.hpp"

namespace gcdkit {

MeaConfig& MeaConfig::resolve_groups() {
  if (old_group.empty() && new_group.empty()) {
    for (int t = 0; t < experts; ++t) (t < experts / 2 ? old_group : new_group).push_back(t);
    // A single expert serves both groups' targets; keep it in "old".
    if (experts == 1) old_group = {0}, new_group.clear();
  }
  return *this;
}

void MeaConfig::validate(int embed_dim, int num_blocks) const {
  if (experts < 1) throw ValidationError("mea: expert count must be >= 1");
  if (bottleneck < 1 || bottleneck >= embed_dim) {
    throw ValidationError("mea: bottleneck must satisfy 1 <= d-hat < d, got " + std::to_string(bottleneck));
  }
  if (adapted_blocks < 1 || adapted_blocks > num_blocks) {
    throw ValidationError("mea: adapted blocks P = " + std::to_string(adapted_blocks) +
                          " must lie in [1, " + std::to_string(num_blocks) + "]");
  }
  if (!(router_temperature > 0)) throw ValidationError("mea: router temperature must be > 0");
  if (!(scale >= 0)) throw ValidationError("mea: scale must be >= 0");
  std::set<int> seen;
  for (int t : old_group) seen.insert(t);
  for (int t : new_group) {
    if (seen.count(t)) throw ValidationError("mea: expert groups overlap at " + std::to_string(t));
    seen.insert(t);
  }
  if (static_cast<int>(seen.size()) != experts || (!seen.empty() && (*seen.begin() != 0 || *seen.rbegin() != experts - 1))) {
    throw ValidationError("mea: expert groups must partition {0.." + std::to_string(experts - 1) + "}");
  }
}

Tensor route(const Tensor& tokens, const RouterParams& router, double temperature) {
  if (!(temperature > 0)) throw ValidationError("route: temperature must be > 0");
  return softmax(matmul_nt(tokens, router.weight), temperature);
}

Tensor expert_forward(const Tensor& tokens, const ExpertParams& e) {
  Tensor hidden = relu(add_row(matmul_nt(tokens, e.down_weight), e.down_bias));
  return add_row(matmul_nt(hidden, e.up_weight), e.up_bias);
}

AdaptedOutput adapted_ffn(const Tensor& pre_ffn, const FeedForward& ffn, std::span<const ExpertParams> experts,
                          const RouterParams* router, const MeaConfig& config) {
  if (static_cast<int>(experts.size()) != config.experts) {
    throw ValidationError("adapted_ffn: expected " + std::to_string(config.experts) + " experts, got " +
                          std::to_string(experts.size()));
  }
  if (config.experts > 1 && router == nullptr) throw ValidationError("adapted_ffn: router required for T > 1");
  Tensor normalized = ffn.normalize(pre_ffn);
  Tensor base = add(ffn.mlp(normalized), pre_ffn);

  Tensor weights = router ? route(normalized, *router, config.router_temperature)
                          : Tensor(Matrix::Ones(normalized.rows(), 1));
  Tensor mixed;
  for (int t = 0; t < config.experts; ++t) {
    Tensor gated = scale_rows(expert_forward(normalized, experts[static_cast<std::size_t>(t)]),
                              slice_cols(weights, t, 1));
    mixed = mixed.defined() ? add(mixed, gated) : gated;
  }
  return {add(base, scale(mixed, config.scale)), weights};
}

std::int64_t count_tunable_params(const MeaConfig& config, int embed_dim) {
  const std::int64_t d = embed_dim;
  const std::int64_t h = config.bottleneck;
  const std::int64_t t = config.experts;
  const std::int64_t per_expert = 2 * d * h + d + h;
  const std::int64_t router = t > 1 ? t * d : 0;
  return static_cast<std::int64_t>(config.adapted_blocks) * (t * per_expert + router);
}

MultiExpertAdapter MultiExpertAdapter::init(MeaConfig config, int embed_dim, int num_blocks, std::uint64_t seed) {
  config.resolve_groups();
  config.validate(embed_dim, num_blocks);
  MultiExpertAdapter mea;
  mea.config_ = config;
  mea.embed_dim_ = embed_dim;
  mea.num_blocks_ = num_blocks;
  Rng rng = make_rng(seed, {0x3EAu});
  const Index d = embed_dim;
  const Index h = config.bottleneck;
  for (int p = 0; p < config.adapted_blocks; ++p) {
    Layer layer;
    for (int t = 0; t < config.experts; ++t) {
      ExpertParams e;
      e.down_weight = Tensor(gaussian_matrix(h, d, 0.02, rng), true);
      e.down_bias = Tensor(Matrix::Zero(1, h), true);
      e.up_weight = Tensor(Matrix::Zero(d, h), true);
      e.up_bias = Tensor(Matrix::Zero(1, d), true);
      layer.experts.push_back(std::move(e));
    }
    if (config.experts > 1) layer.router = RouterParams{Tensor(Matrix::Zero(config.experts, d), true)};
    mea.layers_.push_back(std::move(layer));
  }
  return mea;
}

AdaptedOutput MultiExpertAdapter::forward(int block, const Tensor& pre_ffn, const FeedForward& ffn) const {
  if (!adapts(block)) throw ValidationError("mea: block " + std::to_string(block) + " is not adapted");
  const auto& layer = layers_[static_cast<std::size_t>(block - first_adapted_block())];
  return adapted_ffn(pre_ffn, ffn, layer.experts, layer.router ? &*layer.router : nullptr, config_);
}

std::vector<NamedTensor> MultiExpertAdapter::expert_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t p = 0; p < layers_.size(); ++p) {
    const std::string block = "mea.blocks." + std::to_string(first_adapted_block() + static_cast<int>(p));
    for (std::size_t t = 0; t < layers_[p].experts.size(); ++t) {
      const auto& e = layers_[p].experts[t];
      const std::string prefix = block + ".experts." + std::to_string(t) + ".";
      out.push_back({prefix + "down.weight", e.down_weight});
      out.push_back({prefix + "down.bias", e.down_bias});
      out.push_back({prefix + "up.weight", e.up_weight});
      out.push_back({prefix + "up.bias", e.up_bias});
    }
  }
  return out;
}

std::vector<NamedTensor> MultiExpertAdapter::router_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t p = 0; p < layers_.size(); ++p) {
    if (!layers_[p].router) continue;
    out.push_back({"mea.blocks." + std::to_string(first_adapted_block() + static_cast<int>(p)) + ".router.weight",
                   layers_[p].router->weight});
  }
  return out;
}

std::vector<NamedTensor> MultiExpertAdapter::named() const {
  auto out = expert_parameters();
  auto routers = router_parameters();
  out.insert(out.end(), routers.begin(), routers.end());
  return out;
}

std::int64_t MultiExpertAdapter::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : named()) n += p.tensor.requires_grad() ? p.tensor.numel() : 0;
  return n;
}

void write_route_dump(std::ostream& out, std::span<const int> blocks, std::span<const Matrix> pooled,
                      std::span<const int> sample_ids) {
  out << "block,sample_id,expert_id,pooled_weight\n";
  out.precision(17);
  for (std::size_t b = 0; b < pooled.size(); ++b) {
    const Matrix& m = pooled[b];
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index t = 0; t < m.cols(); ++t) {
        out << blocks[b] << ',' << sample_ids[static_cast<std::size_t>(i)] << ',' << t << ',' << m(i, t) << '\n';
      }
    }
  }
}

}  // namespace gcdkit
