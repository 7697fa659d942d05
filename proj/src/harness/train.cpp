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

#include "gcdkit/harness/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "gcdkit/harness/checkpoint.hpp"

namespace gcdkit {

namespace {

namespace fs = std::filesystem;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string optional_json(const std::optional<double>& v) { return v ? g17(*v) : "null"; }

std::string eval_line(int epoch, const AccuracyReport& r) {
  return "{\"epoch\":" + std::to_string(epoch) + ",\"acc_all\":" + optional_json(r.acc_all) +
         ",\"acc_old\":" + optional_json(r.acc_old) + ",\"acc_new\":" + optional_json(r.acc_new) +
         ",\"n_old\":" + std::to_string(r.n_old) + ",\"n_new\":" + std::to_string(r.n_new) + "}";
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1;
}

bool finite_losses(const StepLosses& l) {
  for (double v : {l.rep_u, l.rep_s, l.cls_u, l.cls_s, l.ba, l.cba, l.total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

GcdSplit prepare_split(const RunConfig& config) {
  if (config.data_file.empty()) return generate(config.dataset_spec());
  GcdSplit split = load_dataset(config.data_file);
  if (split.spec.token_count != config.backbone.token_count || split.spec.feature_dim != config.backbone.input_dim) {
    throw ValidationError("dataset " + config.data_file + " has tokens [" + std::to_string(split.spec.token_count) +
                          " x " + std::to_string(split.spec.feature_dim) + "], backbone expects [" +
                          std::to_string(config.backbone.token_count) + " x " +
                          std::to_string(config.backbone.input_dim) + "]");
  }
  return split;
}

std::string metrics_line(const StepRecord& r) {
  const auto& l = r.losses;
  return "{\"step\":" + std::to_string(r.step) + ",\"epoch\":" + std::to_string(r.epoch) +
         ",\"batch\":" + std::to_string(r.batch) + ",\"lr\":" + g17(r.lr) + ",\"L_rep_u\":" + g17(l.rep_u) +
         ",\"L_rep_s\":" + g17(l.rep_s) + ",\"L_cls_u\":" + g17(l.cls_u) + ",\"L_cls_s\":" + g17(l.cls_s) +
         ",\"L_ba\":" + g17(l.ba) + ",\"L_cba\":" + g17(l.cba) + ",\"total\":" + g17(l.total) + "}";
}

void write_eval_outputs(const EvalPass& pass, const Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  write_metrics_json(pass.report, dir / "report.json");
  write_confusion_csv(pass.report.confusion, dir / "confusion.csv");
  {
    auto out = open_out(dir / "routes.csv");
    write_route_report(out, pass.routes, pass.pseudo, model.old_classes);
  }
  auto out = open_out(dir / "route_dump.csv");
  std::vector<int> blocks;
  std::vector<Matrix> pooled;
  for (const auto& r : pass.routes) {
    blocks.push_back(r.block);
    pooled.push_back(r.pooled);
  }
  write_route_dump(out, blocks, pooled, pass.ids);
}

TrainResult train(const RunConfig& config, const GcdSplit& split, const TrainOptions& options) {
  config.validate();
  if (split.spec.token_count != config.backbone.token_count || split.spec.feature_dim != config.backbone.input_dim) {
    throw ValidationError("train: dataset token shape does not match the backbone");
  }
  TrainResult result{Model::build(config, split.spec.num_classes, split.old_classes), 0, {}, {}};
  Model& model = result.model;
  const fs::path dir = config.out_dir;

  std::ofstream metrics, evals;
  if (options.write_outputs) {
    fs::create_directories(dir / "routes");
    config.save(dir / "config.txt");
    metrics = open_out(dir / "metrics.jsonl");
    evals = open_out(dir / "eval.jsonl");
  }

  const std::int64_t adapter_count =
      model.adapter ? count_tunable_params(model.adapter->config(), config.backbone.embed_dim) : 0;
  spdlog::info("tunable parameters: {} (adapter {}, prototypes {}, projection head {})", model.tunable_count(),
               adapter_count, model.prototypes.centers.numel(), model.head.parameter_count());

  Sgd optimizer(model.trainable(), config.opt);
  const auto batches_per_epoch =
      static_cast<std::int64_t>(epoch_batches(split, config.opt.batch_size, epoch_seed(config.seed, 0)).size());
  const std::int64_t total_steps = batches_per_epoch * config.opt.epochs;

  for (int epoch = 0; epoch < config.opt.epochs; ++epoch) {
    BatchStream stream(split, config.opt.batch_size, epoch_seed(config.seed, epoch), config.augment);
    int batch_index = 0;
    while (auto batch = stream.next()) {
      StepRecord record;
      record.step = result.steps;
      record.epoch = epoch;
      record.batch = batch_index;
      record.lr = cosine_lr(config.opt.lr, result.steps, total_steps);

      optimizer.zero_grad();
      auto abort = [&](const std::string& what) {
        std::string ids;
        for (int id : batch->ids) ids += (ids.empty() ? "" : ",") + std::to_string(id);
        const std::string diag = "non-finite loss at step " + std::to_string(record.step) + " (epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch_index) + "): " + what +
                                 " sample ids [" + ids + "]";
        spdlog::error("{}", diag);
        if (options.write_outputs) open_out(dir / "nan_dump.txt") << diag << '\n';
        throw NumericError(diag);
      };
      StepOutput out;
      try {
        out = step_loss(model, *batch);
      } catch (const NumericError& e) {
        // Raised inside the forward, before any loss value exists.
        abort(std::string(e.what()) + ";");
      }
      record.losses = out.losses;
      if (!finite_losses(out.losses)) abort(metrics_line(record));
      backward(out.total);
      if (options.on_step) options.on_step(record, out, model);
      optimizer.step(record.lr);

      if (options.write_outputs) metrics << metrics_line(record) << '\n';
      result.last = out.losses;
      ++result.steps;
      ++batch_index;
    }
    spdlog::debug("epoch {} done, last total loss {}", epoch, result.last.total);

    if (options.evaluate_each_epoch || epoch + 1 == config.opt.epochs) {
      EvalPass pass = evaluate_unlabeled(model, split);
      if (options.write_outputs) {
        evals << eval_line(epoch, pass.report) << '\n';
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.csv", epoch);
        auto out = open_out(dir / "routes" / name);
        write_route_report(out, pass.routes, pass.pseudo, model.old_classes);
      }
      spdlog::info("epoch {}: acc_all {} acc_old {} acc_new {}", epoch, optional_json(pass.report.acc_all),
                   optional_json(pass.report.acc_old), optional_json(pass.report.acc_new));
      if (options.on_epoch) options.on_epoch(epoch, pass);
      result.final_eval = std::move(pass);
    }
  }
  if (config.opt.epochs == 0) result.final_eval = evaluate_unlabeled(model, split);

  if (options.write_outputs) {
    write_eval_outputs(result.final_eval, model, dir);
    CheckpointRecord record;
    record.step = result.steps;
    record.config_hash = model.config.hash();
    const auto& l = result.last;
    record.metrics = {{"L_rep_u", l.rep_u}, {"L_rep_s", l.rep_s}, {"L_cls_u", l.cls_u}, {"L_cls_s", l.cls_s},
                      {"L_ba", l.ba},       {"L_cba", l.cba},     {"total", l.total}};
    const auto& r = result.final_eval.report;
    if (r.acc_all) record.metrics["acc_all"] = *r.acc_all;
    if (r.acc_old) record.metrics["acc_old"] = *r.acc_old;
    if (r.acc_new) record.metrics["acc_new"] = *r.acc_new;
    save_checkpoint(model, record, dir / "checkpoint");
  }
  return result;
}

}  // namespace gcdkit
