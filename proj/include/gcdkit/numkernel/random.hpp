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
#include <initializer_list>
#include <random>

#include "gcdkit/numkernel/tensor.hpp"

namespace gcdkit {

using Rng = std::mt19937_64;

/// Independent stream derived from a base seed and a list of tags.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::seed_seq::result_type parts[16];
  std::size_t n = 0;
  parts[n++] = static_cast<std::uint32_t>(seed);
  parts[n++] = static_cast<std::uint32_t>(seed >> 32);
  for (auto t : tags) {
    if (n + 2 > 16) break;
    parts[n++] = static_cast<std::uint32_t>(t);
    parts[n++] = static_cast<std::uint32_t>(t >> 32);
  }
  std::seed_seq seq(parts, parts + n);
  return Rng(seq);
}

template <typename Scalar = double>
RowMatrix<Scalar> gaussian_matrix(Index rows, Index cols, Scalar stddev, Rng& rng) {
  std::normal_distribution<Scalar> dist(Scalar(0), stddev);
  RowMatrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

template <typename Scalar = double>
RowMatrix<Scalar> uniform_matrix(Index rows, Index cols, Scalar lo, Scalar hi, Rng& rng) {
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  RowMatrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace gcdkit
