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

#include "gcdkit/harness/model.hpp"

#include <algorithm>

namespace gcdkit {

Model Model::build(const RunConfig& config, int num_classes, std::set<int> old_classes) {
  config.validate();
  Model m;
  m.config = config;
  m.config.mea.resolve_groups();
  m.backbone = init_backbone(config.backbone);
  const int d = config.backbone.embed_dim;
  if (config.use_adapter) {
    m.adapter = MultiExpertAdapter::init(m.config.mea, d, config.backbone.num_blocks, config.seed);
  }
  m.head = ProjectionHead::init(d, config.head_hidden, config.proj_dim, config.seed);
  m.prototypes = Prototypes::init(num_classes, d, config.seed);
  m.old_classes = std::move(old_classes);
  if (config.routes()) {
    m.targets = TargetDistributions::make(m.config.mea.experts, m.config.mea.old_group, m.config.mea.new_group);
  }
  return m;
}

std::vector<NamedTensor> Model::trainable() const {
  std::vector<NamedTensor> out;
  for (auto& p : backbone.named()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  if (adapter) {
    auto a = adapter->named();
    out.insert(out.end(), a.begin(), a.end());
  }
  auto h = head.named();
  out.insert(out.end(), h.begin(), h.end());
  out.push_back({"prototypes.centers", prototypes.centers});
  return out;
}

std::vector<NamedTensor> Model::frozen() const {
  std::vector<NamedTensor> out;
  for (auto& p : backbone.named()) {
    if (!p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

std::int64_t Model::tunable_count() const {
  std::int64_t n = adapter ? count_tunable_params(adapter->config(), config.backbone.embed_dim) : 0;
  n += prototypes.centers.numel() + head.parameter_count();
  for (auto& p : backbone.named()) n += p.tensor.requires_grad() ? p.tensor.numel() : 0;
  return n;
}

StepOutput step_loss(const Model& model, const BatchViews& batch, const Tensor* frozen_targets,
                     const std::vector<int>* frozen_pseudo) {
  const RunConfig& cfg = model.config;
  const int n = batch.size();
  ForwardTrace first = encode(batch.view1, n, model.backbone, cfg.backbone, model.adapter_ptr());
  ForwardTrace second = encode(batch.view2, n, model.backbone, cfg.backbone, model.adapter_ptr());

  StepOutput out;
  out.sgcd = simgcd_loss(first.features, second.features, model.head, model.prototypes, batch, cfg.loss,
                         frozen_targets);
  Tensor total = out.sgcd.loss.total;
  if (cfg.routes()) {
    for (std::size_t l = 0; l < first.route_weights.size(); ++l) {
      if (!first.route_weights[l]) continue;
      out.blocks.push_back(static_cast<int>(l));
      out.token_routes.push_back(*first.route_weights[l]);
      out.pooled.push_back(
          pool_sample_route(*first.route_weights[l], first.sequence_length, cfg.constraint.route_temperature));
    }
    if (frozen_pseudo) {
      out.pseudo = *frozen_pseudo;
    } else if (cfg.oracle_labels) {
      out.pseudo = batch.truths;
    } else {
      out.pseudo = pseudo_labels(out.sgcd.predictions.value(), batch.labels, batch.labeled);
    }
    out.route_loss = route_assignment_loss(out.pooled, out.blocks, out.pseudo, model.old_classes, *model.targets,
                                           cfg.constraint);
    total = add(total, out.route_loss->total);
    out.losses.ba = out.route_loss->balanced.item();
    out.losses.cba = out.route_loss->category.item();
  }
  out.total = total;
  out.losses.rep_u = out.sgcd.loss.rep_unsup.item();
  out.losses.rep_s = out.sgcd.loss.rep_sup.item();
  out.losses.cls_u = out.sgcd.loss.cls_unsup.item();
  out.losses.cls_s = out.sgcd.loss.cls_sup.item();
  out.losses.total = total.item();
  return out;
}

Sgd::Sgd(std::vector<NamedTensor> params, const OptimizerConfig& config)
    : params_(std::move(params)), momentum_(config.momentum), weight_decay_(config.weight_decay) {
  for (const auto& p : params_) {
    velocity_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    decay_.push_back(p.name.rfind("prototypes", 0) != 0);
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    Matrix g = t.grad();
    if (decay_[i] && weight_decay_ > 0) g += weight_decay_ * t.value();
    velocity_[i] = momentum_ * velocity_[i] + g;
    t.mutable_value() -= lr * velocity_[i];
  }
}

EvalPass evaluate_samples(const Model& model, std::span<const Sample* const> samples, int batch_size) {
  NoGradGuard no_grad;
  const RunConfig& cfg = model.config;
  EvalPass pass;
  std::vector<Matrix> pooled_parts;
  std::vector<int> blocks;
  for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(samples.size() - at, static_cast<std::size_t>(batch_size));
    auto chunk = samples.subspan(at, count);
    ForwardTrace trace = encode(Tensor(stack_tokens(chunk)), static_cast<int>(count), model.backbone, cfg.backbone,
                                model.adapter_ptr());
    const Matrix probs = predict(trace.features, model.prototypes, cfg.loss.tau_s).value();
    for (std::size_t i = 0; i < count; ++i) {
      Index best = 0;
      probs.row(static_cast<Index>(i)).maxCoeff(&best);
      pass.predictions.push_back(static_cast<int>(best));
      pass.truths.push_back(chunk[i]->label);
      pass.ids.push_back(chunk[i]->id);
    }
    if (!cfg.routes()) continue;
    std::size_t slot = 0;
    for (std::size_t l = 0; l < trace.route_weights.size(); ++l) {
      if (!trace.route_weights[l]) continue;
      Matrix pooled =
          pool_sample_route(*trace.route_weights[l], trace.sequence_length, cfg.constraint.route_temperature).value();
      if (at == 0) {
        blocks.push_back(static_cast<int>(l));
        pooled_parts.push_back(std::move(pooled));
      } else {
        Matrix& acc = pooled_parts[slot];
        Matrix grown(acc.rows() + pooled.rows(), acc.cols());
        grown << acc, pooled;
        acc = std::move(grown);
      }
      ++slot;
    }
  }
  pass.pseudo = cfg.oracle_labels ? pass.truths : pass.predictions;
  for (std::size_t b = 0; b < blocks.size(); ++b) pass.routes.push_back({blocks[b], std::move(pooled_parts[b])});
  pass.report = gcd_accuracy(pass.predictions, pass.truths, model.old_classes, model.prototypes.num_classes());
  return pass;
}

EvalPass evaluate_unlabeled(const Model& model, const GcdSplit& split) {
  std::vector<const Sample*> samples;
  for (const auto& s : split.unlabeled) samples.push_back(&s);
  return evaluate_samples(model, samples);
}

}  // namespace gcdkit
