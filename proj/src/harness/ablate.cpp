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

#include "gcdkit/harness/ablate.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gcdkit/harness/train.hpp"

namespace gcdkit {

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {"baseline-no-adapter", "single-adapter", "MEA", "MEA+L_ba",
                                                 "MEA+L_ba+L_cba"};
  return names;
}

RunConfig ablation_config(const RunConfig& base, const std::string& variant) {
  RunConfig c = base;
  if (variant == "baseline-no-adapter") {
    c.use_adapter = false;
    c.constraint.alpha = c.constraint.beta = 0;
  } else if (variant == "single-adapter") {
    c.mea.experts = 1;
    c.mea.old_group.clear();
    c.mea.new_group.clear();
    c.constraint.alpha = c.constraint.beta = 0;
  } else if (variant == "MEA") {
    c.constraint.alpha = c.constraint.beta = 0;
  } else if (variant == "MEA+L_ba") {
    c.constraint.alpha = 0;
  } else if (variant != "MEA+L_ba+L_cba") {
    throw ValidationError("unknown ablation variant '" + variant + "'");
  }
  if (variant != "baseline-no-adapter") c.use_adapter = true;
  return c;
}

std::vector<AblationRow> ablate(const RunConfig& base, std::span<const std::string> variants,
                                std::span<const std::uint64_t> seeds) {
  const GcdSplit split = prepare_split(base);
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    for (std::uint64_t seed : seeds) {
      RunConfig c = ablation_config(base, variant);
      c.seed = seed;
      TrainOptions options;
      options.write_outputs = false;
      options.evaluate_each_epoch = false;
      auto result = train(c, split, options);
      AblationRow row;
      row.variant = variant;
      row.seed = seed;
      row.experts = c.use_adapter ? c.mea.experts : 0;
      row.bottleneck = c.use_adapter ? c.mea.bottleneck : 0;
      row.balanced = c.routes() && c.constraint.beta > 0;
      row.category = c.routes() && c.constraint.alpha > 0;
      const auto& r = result.final_eval.report;
      row.acc_all = r.acc_all;
      row.acc_old = r.acc_old;
      row.acc_new = r.acc_new;
      spdlog::info("ablate {} seed {}: acc_all {:.4f} acc_old {:.4f} acc_new {:.4f}", variant, seed,
                   r.acc_all.value_or(NAN), r.acc_old.value_or(NAN), r.acc_new.value_or(NAN));
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

std::optional<double> mean_of(std::span<const AblationRow> rows, const std::string& variant,
                              std::optional<double> AblationRow::*field) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.variant != variant || !(r.*field)) continue;
    sum += *(r.*field);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::optional<double> mean_acc_new(std::span<const AblationRow> rows, const std::string& variant) {
  return mean_of(rows, variant, &AblationRow::acc_new);
}

void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,seed,T,d_hat,L_ba,L_cba,acc_all,acc_old,acc_new\n";
  auto flags = [](const AblationRow& r) {
    return std::to_string(r.experts) + "," + std::to_string(r.bottleneck) + "," + (r.balanced ? "1" : "0") + "," +
           (r.category ? "1" : "0");
  };
  std::vector<std::string> order;
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << flags(r) << ',' << cell(r.acc_all) << ',' << cell(r.acc_old) << ','
        << cell(r.acc_new) << '\n';
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  for (const auto& v : order) {
    const auto& first = *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.variant == v; });
    out << v << ",mean," << flags(first) << ',' << cell(mean_of(rows, v, &AblationRow::acc_all)) << ','
        << cell(mean_of(rows, v, &AblationRow::acc_old)) << ',' << cell(mean_of(rows, v, &AblationRow::acc_new))
        << '\n';
  }
}

}  // namespace gcdkit
