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

#include "gcdkit/harness/gradcheck.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "gcdkit/harness/train.hpp"
#include "gcdkit/numkernel/random.hpp"

namespace gcdkit {

namespace {

std::string group_of(const std::string& name) {
  if (name.find(".experts.") != std::string::npos) return "experts";
  if (name.find(".router.") != std::string::npos) return "router";
  if (name.rfind("prototypes", 0) == 0) return "prototypes";
  if (name.rfind("head.", 0) == 0) return "projection_head";
  return "backbone";
}

}  // namespace

void require_tiny(const RunConfig& c) {
  const int dims[] = {c.backbone.embed_dim, c.backbone.input_dim, c.backbone.token_count, c.backbone.mlp_hidden,
                      c.mea.bottleneck,     c.mea.experts,        c.head_hidden,          c.proj_dim,
                      c.data.num_classes};
  if (std::any_of(std::begin(dims), std::end(dims), [](int d) { return d > 8; })) {
    throw ValidationError("grad-check needs a tiny config (all dims <= 8)");
  }
}

GradCheckReport grad_check(const RunConfig& config, const GradCheckOptions& options) {
  require_tiny(config);
  const GcdSplit split = prepare_split(config);
  Model model = Model::build(config, split.spec.num_classes, split.old_classes);

  // Zero-initialized up-projections would leave the router and the down
  // projections without gradient.
  Rng rng = make_rng(config.seed, {0x6C4Eu});
  if (model.adapter) {
    for (auto& layer : model.adapter->layers()) {
      for (auto& e : layer.experts) {
        e.up_weight.mutable_value() = gaussian_matrix(e.up_weight.rows(), e.up_weight.cols(), 0.3, rng);
        e.up_bias.mutable_value() = gaussian_matrix(1, e.up_bias.cols(), 0.1, rng);
        e.down_bias.mutable_value() = gaussian_matrix(1, e.down_bias.cols(), 0.1, rng);
      }
      if (layer.router) {
        auto& w = layer.router->weight;
        w.mutable_value() = gaussian_matrix(w.rows(), w.cols(), 1.0, rng);
      }
    }
  }

  const auto batches = epoch_batches(split, config.opt.batch_size, config.seed);
  const BatchViews batch = make_batch_views(batches.front(), config.augment, config.seed);

  auto params = model.trainable();
  for (auto& p : params) p.tensor.zero_grad();
  StepOutput base = step_loss(model, batch);
  const Tensor targets = base.sgcd.targets.detach();
  const std::vector<int> pseudo = base.pseudo;
  {
    StepOutput analytic = step_loss(model, batch, &targets, &pseudo);
    backward(analytic.total);
  }
  std::vector<NamedTensor> grads;
  for (const auto& p : params) grads.push_back({p.name, Tensor(p.tensor.grad())});
  if (options.corrupt) options.corrupt(grads);

  auto loss_at = [&] {
    NoGradGuard no_grad;
    return step_loss(model, batch, &targets, &pseudo).total.item();
  };

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::map<std::string, GroupCheck> groups;
  for (const char* name : {"experts", "router", "prototypes", "projection_head", "backbone"}) {
    groups[name] = GroupCheck{name, 0, 0, true, true, 0};
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    GroupCheck& g = groups[group_of(params[i].name)];
    g.skipped = false;
    Matrix& value = params[i].tensor.mutable_value();
    const Matrix& grad = grads[i].tensor.value();
    for (Index k = 0; k < value.size(); ++k) {
      const double saved = value.data()[k];
      const double analytic = grad.data()[k];
      // A ReLU kink inside [x - h, x + h] spoils the central difference; a
      // smaller step clears it, while a wrong analytic gradient stays wrong.
      double err = 0, numeric = 0;
      double step = options.step;
      for (int attempt = 0; attempt <= options.refinements; ++attempt, step *= 0.1) {
        value.data()[k] = saved + step;
        const double plus = loss_at();
        value.data()[k] = saved - step;
        const double minus = loss_at();
        value.data()[k] = saved;
        numeric = (plus - minus) / (2 * step);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
        err = std::abs(analytic - numeric) / denom;
        if (err < options.tolerance) break;
        if (attempt == 0 && options.refinements > 0) ++g.refined;
      }
      if (err > g.max_rel_error) {
        spdlog::debug("grad-check {}[{}]: analytic {:.10g} numeric {:.10g}", params[i].name, k, analytic, numeric);
      }
      g.max_rel_error = std::max(g.max_rel_error, err);
      ++g.entries;
    }
  }
  for (const char* name : {"experts", "router", "prototypes", "projection_head", "backbone"}) {
    GroupCheck g = groups[name];
    g.passed = g.skipped || g.max_rel_error < options.tolerance;
    report.passed = report.passed && g.passed;
    report.groups.push_back(g);
  }
  return report;
}

}  // namespace gcdkit
