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

#include "gcdkit/evalmetrics.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "gcdkit/error.hpp"

namespace gcdkit {

namespace {

std::int64_t min_cost_value(const CountMatrix& cost) {
  const auto assignment = hungarian_min_cost(cost);
  std::int64_t total = 0;
  for (Index i = 0; i < cost.rows(); ++i) total += cost(i, assignment[static_cast<std::size_t>(i)]);
  return total;
}

// cost with row `skip_row` and column `skip_col` removed.
CountMatrix minor(const CountMatrix& cost, Index skip_row, Index skip_col) {
  const Index n = cost.rows();
  CountMatrix out(n - 1, n - 1);
  for (Index i = 0, r = 0; i < n; ++i) {
    if (i == skip_row) continue;
    for (Index j = 0, c = 0; j < n; ++j) {
      if (j == skip_col) continue;
      out(r, c++) = cost(i, j);
    }
    ++r;
  }
  return out;
}

}  // namespace

ConfusionMatrix ConfusionMatrix::from(std::span<const int> predictions, std::span<const int> truths, int min_size) {
  if (predictions.size() != truths.size()) throw ValidationError("confusion: prediction/truth length mismatch");
  int n = std::max(min_size, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || truths[i] < 0) throw ValidationError("confusion: negative cluster or class id");
    n = std::max({n, predictions[i] + 1, truths[i] + 1});
  }
  ConfusionMatrix cm;
  cm.counts = CountMatrix::Zero(n, n);
  for (std::size_t i = 0; i < predictions.size(); ++i) ++cm.counts(predictions[i], truths[i]);
  return cm;
}

// Shortest augmenting path with potentials, 1-based internally.
std::vector<int> hungarian_min_cost(const CountMatrix& cost) {
  if (cost.rows() != cost.cols()) throw ValidationError("hungarian: matrix must be square");
  const int n = static_cast<int>(cost.rows());
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      std::int64_t delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), 0);
  for (int j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  return row_to_col;
}

PermutationAssignment optimal_permutation(const ConfusionMatrix& cm) {
  const Index n = cm.counts.rows();
  PermutationAssignment out;
  if (n == 0) return out;
  CountMatrix cost = -cm.counts;
  std::int64_t remaining = min_cost_value(cost);

  // Fix rows in order, each to the smallest column that still admits an
  // optimal completion of the remaining rows.
  std::vector<int> free_cols(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) free_cols[static_cast<std::size_t>(j)] = static_cast<int>(j);
  out.mapping.assign(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    bool fixed = false;
    for (Index c = 0; c < cost.cols(); ++c) {
      const std::int64_t rest_target = remaining - cost(0, c);
      const std::int64_t rest = cost.rows() > 1 ? min_cost_value(minor(cost, 0, c)) : 0;
      if (rest != rest_target) continue;
      out.mapping[static_cast<std::size_t>(i)] = free_cols[static_cast<std::size_t>(c)];
      free_cols.erase(free_cols.begin() + c);
      if (cost.rows() > 1) cost = minor(cost, 0, c);
      remaining = rest;
      fixed = true;
      break;
    }
    if (!fixed) throw NumericError("optimal_permutation: no optimal completion found");
  }
  for (Index i = 0; i < n; ++i) out.matched += cm.counts(i, out.mapping[static_cast<std::size_t>(i)]);
  return out;
}

AccuracyReport gcd_accuracy(std::span<const int> predictions, std::span<const int> truths,
                            const std::set<int>& old_classes, int num_classes) {
  AccuracyReport report;
  report.confusion = ConfusionMatrix::from(predictions, truths, num_classes);
  report.assignment = optimal_permutation(report.confusion);
  std::int64_t hit_all = 0, hit_old = 0, hit_new = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool hit = report.assignment.mapping[static_cast<std::size_t>(predictions[i])] == truths[i];
    const bool old = old_classes.count(truths[i]) > 0;
    ++report.n_all;
    hit_all += hit;
    if (old) {
      ++report.n_old;
      hit_old += hit;
    } else {
      ++report.n_new;
      hit_new += hit;
    }
  }
  auto frac = [](std::int64_t hits, std::int64_t n) -> std::optional<double> {
    if (n == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(n);
  };
  report.acc_all = frac(hit_all, report.n_all);
  report.acc_old = frac(hit_old, report.n_old);
  report.acc_new = frac(hit_new, report.n_new);
  return report;
}

void write_metrics_json(const AccuracyReport& report, const std::filesystem::path& path) {
  auto value = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["acc_all"] = value(report.acc_all);
  j["acc_old"] = value(report.acc_old);
  j["acc_new"] = value(report.acc_new);
  j["n_old"] = report.n_old;
  j["n_new"] = report.n_new;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "predicted";
  for (int k = 0; k < cm.size(); ++k) out << ",true_" << k;
  out << '\n';
  for (int p = 0; p < cm.size(); ++p) {
    out << p;
    for (int k = 0; k < cm.size(); ++k) out << ',' << cm.counts(p, k);
    out << '\n';
  }
}

void write_route_report(std::ostream& out, std::span<const BlockRoutes> routes, std::span<const int> pseudo,
                        const std::set<int>& old_classes) {
  out << "block,group,expert_id,mean_weight\n";
  out.precision(17);
  for (const auto& r : routes) {
    if (r.pooled.rows() != static_cast<Index>(pseudo.size())) {
      throw ValidationError("route_report: pseudo-label count differs from pooled rows");
    }
    const Index t = r.pooled.cols();
    Vector sum_old = Vector::Zero(t), sum_new = Vector::Zero(t);
    Index n_old = 0, n_new = 0;
    for (Index i = 0; i < r.pooled.rows(); ++i) {
      if (old_classes.count(pseudo[static_cast<std::size_t>(i)])) {
        sum_old += r.pooled.row(i);
        ++n_old;
      } else {
        sum_new += r.pooled.row(i);
        ++n_new;
      }
    }
    auto emit = [&](const char* group, const Vector& sum, Index n) {
      for (Index e = 0; e < t; ++e) {
        out << r.block << ',' << group << ',' << e << ',';
        if (n == 0) {
          out << "nan";
        } else {
          out << sum(e) / static_cast<double>(n);
        }
        out << '\n';
      }
    };
    emit("old", sum_old, n_old);
    emit("new", sum_new, n_new);
    emit("all", sum_old + sum_new, n_old + n_new);
  }
}

}  // namespace gcdkit
