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

// gcdkit command line: gen-data, train, evaluate, grad-check, ablate,
// dump-routes.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "gcdkit/error.hpp"
#include "gcdkit/harness/ablate.hpp"
#include "gcdkit/harness/checkpoint.hpp"
#include "gcdkit/harness/gradcheck.hpp"
#include "gcdkit/harness/train.hpp"

namespace fs = std::filesystem;
using namespace gcdkit;

namespace {

// --preset, then --config, then one flag per config key.
struct ConfigFlags {
  std::string preset;
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::string& default_preset) {
    preset = default_preset;
    app->add_option("--preset", preset, "base preset")->capture_default_str();
    app->add_option("--config", config_file, "key=value config file, applied over the preset");
    for (const auto& key : RunConfig::keys()) {
      app->add_option_function<std::string>(
          "--" + key, [this, key](const std::string& v) { values[key] = v; }, "config key " + key);
    }
  }

  RunConfig resolve() const {
    RunConfig c = RunConfig::preset(preset);
    // A preset line inside the file is ignored; --preset governs the base.
    if (!config_file.empty()) c.apply(read_text(config_file), false);
    for (const auto& [k, v] : values) c.set(k, v);
    c.validate();
    return c;
  }
};

std::string acc_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

void print_report(const AccuracyReport& r) {
  std::cout << "acc_all " << acc_text(r.acc_all) << "  acc_old " << acc_text(r.acc_old) << "  acc_new "
            << acc_text(r.acc_new) << "  (n_old " << r.n_old << ", n_new " << r.n_new << ")\n";
}

GcdSplit split_for(const Model& model, const std::string& data_file) {
  RunConfig c = model.config;
  if (!data_file.empty()) c.data_file = data_file;
  GcdSplit split = prepare_split(c);
  if (split.spec.num_classes != model.prototypes.num_classes()) {
    throw ValidationError("dataset has " + std::to_string(split.spec.num_classes) +
                          " classes, checkpoint prototypes " + std::to_string(model.prototypes.num_classes()));
  }
  return split;
}

int run(int argc, char** argv) {
  CLI::App app{"gcdkit: multi-expert adapter tuning for generalized category discovery"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic .gcd dataset");
  ConfigFlags gen_flags;
  gen_flags.attach(gen, "desk");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output .gcd file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train and write logs, reports and a checkpoint");
  ConfigFlags train_flags;
  train_flags.attach(train_cmd, "desk");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on D^u");
  std::string eval_ckpt, eval_data, eval_out = "eval", eval_config;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint stem (without .txt/.bin)")->required();
  eval_cmd->add_option("--data", eval_data, ".gcd file; default regenerates from the checkpoint config");
  eval_cmd->add_option("--out", eval_out, "report directory")->capture_default_str();
  eval_cmd->add_option("--config", eval_config, "config to compare against the checkpoint hash");

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of every trainable group");
  ConfigFlags gc_flags;
  gc_flags.attach(gc_cmd, "tiny");
  GradCheckOptions gc_options;
  gc_cmd->add_option("--tolerance", gc_options.tolerance, "max relative error")->capture_default_str();
  gc_cmd->add_option("--step", gc_options.step, "finite-difference step")->capture_default_str();

  // ablate
  auto* ab_cmd = app.add_subcommand("ablate", "variant comparison table");
  ConfigFlags ab_flags;
  ab_flags.attach(ab_cmd, "desk");
  std::vector<std::uint64_t> ab_seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> ab_variants = ablation_variants();
  std::string ab_out;
  ab_cmd->add_option("--seeds", ab_seeds, "run seeds")->delimiter(',')->capture_default_str();
  ab_cmd->add_option("--variants", ab_variants, "variants")->delimiter(',')->capture_default_str();
  ab_cmd->add_option("--out", ab_out, "CSV path; default <run.out_dir>/ablation.csv");

  // dump-routes
  auto* dump_cmd = app.add_subcommand("dump-routes", "per-sample pooled route weights of a checkpoint");
  std::string dump_ckpt, dump_data, dump_out = "route_dump.csv";
  dump_cmd->add_option("--checkpoint", dump_ckpt, "checkpoint stem")->required();
  dump_cmd->add_option("--data", dump_data, ".gcd file");
  dump_cmd->add_option("--out", dump_out, "CSV path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*gen) {
    RunConfig c = gen_flags.resolve();
    GcdSplit split = generate(c.dataset_spec());
    save_dataset(split, gen_out);
    std::cout << "wrote " << gen_out << ": " << split.labeled.size() << " labeled, " << split.unlabeled.size()
              << " unlabeled, " << split.spec.num_classes << " classes (" << split.old_classes.size()
              << " old)\n";
    return kExitOk;
  }

  if (*train_cmd) {
    RunConfig c = train_flags.resolve();
    GcdSplit split = prepare_split(c);
    auto result = train(c, split);
    std::cout << "trained " << result.steps << " steps, outputs in " << c.out_dir << "\n";
    print_report(result.final_eval.report);
    return kExitOk;
  }

  if (*eval_cmd) {
    CheckpointRecord record;
    Model model = load_checkpoint(eval_ckpt, &record);
    if (!eval_config.empty()) {
      RunConfig expected = RunConfig::load(eval_config);
      expected.mea.resolve_groups();
      if (expected.hash() != record.config_hash) {
        spdlog::warn("config hash {} differs from checkpoint {}", expected.hash(), record.config_hash);
      }
    }
    GcdSplit split = split_for(model, eval_data);
    EvalPass pass = evaluate_unlabeled(model, split);
    write_eval_outputs(pass, model, eval_out);
    print_report(pass.report);
    return kExitOk;
  }

  if (*gc_cmd) {
    RunConfig c = gc_flags.resolve();
    GradCheckReport report = grad_check(c, gc_options);
    for (const auto& g : report.groups) {
      if (g.skipped) {
        std::cout << g.name << ": skipped\n";
        continue;
      }
      std::cout << fmt::format("{}: {} entries ({} at a reduced step), max rel error {:.3e} {}\n", g.name, g.entries,
                               g.refined, g.max_rel_error, g.passed ? "PASS" : "FAIL");
    }
    std::cout << (report.passed ? "grad-check passed" : "grad-check FAILED") << " (tolerance " << report.tolerance
              << ")\n";
    return report.passed ? kExitOk : kExitNumeric;
  }

  if (*ab_cmd) {
    RunConfig c = ab_flags.resolve();
    auto rows = ablate(c, ab_variants, ab_seeds);
    fs::path out = ab_out.empty() ? fs::path(c.out_dir) / "ablation.csv" : fs::path(ab_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_ablation_csv(rows, out);
    for (const auto& v : ab_variants) std::cout << v << ": mean acc_new " << acc_text(mean_acc_new(rows, v)) << "\n";
    std::cout << "wrote " << out.string() << "\n";
    return kExitOk;
  }

  if (*dump_cmd) {
    Model model = load_checkpoint(dump_ckpt);
    GcdSplit split = split_for(model, dump_data);
    EvalPass pass = evaluate_unlabeled(model, split);
    std::ofstream out(dump_out);
    if (!out) throw IoError("cannot write " + dump_out);
    std::vector<int> blocks;
    std::vector<Matrix> pooled;
    for (const auto& r : pass.routes) {
      blocks.push_back(r.block);
      pooled.push_back(r.pooled);
    }
    write_route_dump(out, blocks, pooled, pass.ids);
    std::cout << "wrote " << dump_out << " (" << pass.ids.size() << " samples, " << blocks.size() << " blocks)\n";
    return kExitOk;
  }
  return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  }
}
