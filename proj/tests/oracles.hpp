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


// Independent reference computations shared by the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "gcdkit/evalmetrics.hpp"
#include "gcdkit/numkernel/ops.hpp"
#include "gcdkit/numkernel/random.hpp"

namespace gcdkit::testing {

/// Central differences of a scalar function with respect to one tensor.
inline Matrix numeric_gradient(const std::function<double()>& loss, Tensor& param, double h = 1e-5) {
  NoGradGuard no_grad;
  Matrix g(param.rows(), param.cols());
  for (Index i = 0; i < param.numel(); ++i) {
    double& x = param.mutable_value().data()[i];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6) {
  double worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

/// Worst relative error over `params` for loss(params); each param must
/// require a gradient.
inline double gradient_error(const std::function<Tensor()>& build, std::vector<Tensor*> params) {
  for (auto* p : params) p->zero_grad();
  backward(build());
  double worst = 0;
  for (auto* p : params) {
    Matrix analytic = p->grad();
    Matrix numeric = numeric_gradient([&] { return build().item(); }, *p);
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  return worst;
}

inline Tensor random_param(Index rows, Index cols, Rng& rng, double lo = -1, double hi = 1) {
  return Tensor(uniform_matrix(rows, cols, lo, hi, rng), true);
}

/// Scalar softmax, written out without max-subtraction.
inline std::vector<double> softmax_ref(const std::vector<double>& x, double tau = 1) {
  std::vector<double> e(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (e[i] = std::exp(x[i] / tau));
  for (auto& v : e) v /= z;
  return e;
}

inline double kl_ref(const std::vector<double>& p, const std::vector<double>& q) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

struct BruteForceMatch {
  std::vector<int> mapping;
  std::int64_t matched = 0;
  int optima = 0;  // permutations reaching `matched`
};

/// Exhaustive search over all permutations in lexicographic order; the
/// first maximum is kept, which is the lexicographically smallest optimum.
inline BruteForceMatch brute_force_match(const CountMatrix& counts) {
  const int k = static_cast<int>(counts.rows());
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  BruteForceMatch best;
  do {
    std::int64_t total = 0;
    for (int r = 0; r < k; ++r) total += counts(r, perm[static_cast<std::size_t>(r)]);
    if (best.optima == 0 || total > best.matched) {
      best = {perm, total, 1};
    } else if (total == best.matched) {
      ++best.optima;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline CountMatrix random_counts(int k, Rng& rng, int max_count = 9) {
  std::uniform_int_distribution<int> dist(0, max_count);
  CountMatrix m(k, k);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace gcdkit::testing
