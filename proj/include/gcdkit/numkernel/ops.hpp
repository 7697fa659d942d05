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

// Differentiable primitives. All of them treat a tensor as its row-major
// matrix view (leading extents folded into rows); "row-wise" means over the
// last extent.

#include <cmath>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include "gcdkit/numkernel/tensor.hpp"

namespace gcdkit {

namespace detail {

template <typename Scalar>
BasicTensor<Scalar> record(Shape shape, RowMatrix<Scalar> value, const char* name,
                           std::initializer_list<BasicTensor<Scalar>> inputs,
                           std::function<void(TensorNode<Scalar>&)> backward) {
  std::vector<BasicTensor<Scalar>> list(inputs);
  return BasicTensor<Scalar>::from_op(std::move(shape), std::move(value), name, list,
                                      std::move(backward));
}

// Matrix-shaped result; the shape is read from the value once it is bound.
template <typename Scalar>
BasicTensor<Scalar> record(RowMatrix<Scalar> value, const char* name,
                           std::initializer_list<BasicTensor<Scalar>> inputs,
                           std::function<void(TensorNode<Scalar>&)> backward) {
  Shape shape{value.rows(), value.cols()};
  return record<Scalar>(std::move(shape), std::move(value), name, inputs, std::move(backward));
}

template <typename Scalar>
void require_same_extents(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b,
                          const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
  }
}

template <typename Scalar>
void require_positive_temperature(Scalar temperature, const char* op) {
  if (!(temperature > Scalar(0))) {
    throw ValidationError(std::string(op) + ": temperature must be > 0, got " +
                          std::to_string(static_cast<double>(temperature)));
  }
}

inline Shape matrix_shape(Index rows, Index cols) { return Shape{rows, cols}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Products

/// a[m x k] * b[k x n].
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul: inner extents differ, " + shape_string(a.shape()) + " * " +
                          shape_string(b.shape()));
  }
  RowMatrix<Scalar> out = a.value() * b.value();
  return detail::record<Scalar>(std::move(out),
                                "matmul", {a, b}, [](TensorNode<Scalar>& self) {
                                  auto& lhs = *self.inputs[0];
                                  auto& rhs = *self.inputs[1];
                                  if (lhs.requires_grad)
                                    lhs.accumulate(self.grad * rhs.value.transpose());
                                  if (rhs.requires_grad)
                                    rhs.accumulate(lhs.value.transpose() * self.grad);
                                });
}

/// a[m x k] * b[n x k]^T; the row-vector-times-weight-transpose form used by
/// every linear layer here.
template <typename Scalar>
BasicTensor<Scalar> matmul_nt(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ValidationError("matmul_nt: inner extents differ, " + shape_string(a.shape()) +
                          " * " + shape_string(b.shape()) + "^T");
  }
  RowMatrix<Scalar> out = a.value() * b.value().transpose();
  return detail::record<Scalar>(std::move(out),
                                "matmul_nt", {a, b}, [](TensorNode<Scalar>& self) {
                                  auto& lhs = *self.inputs[0];
                                  auto& rhs = *self.inputs[1];
                                  if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value);
                                  if (rhs.requires_grad)
                                    rhs.accumulate(self.grad.transpose() * lhs.value);
                                });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  RowMatrix<Scalar> out = a.value().transpose();
  return detail::record<Scalar>(std::move(out),
                                "transpose", {a}, [](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(self.grad.transpose());
                                });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_extents(a, b, "add");
  RowMatrix<Scalar> out = a.value() + b.value();
  return detail::record<Scalar>(a.shape(), std::move(out), "add", {a, b},
                                [](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(self.grad);
                                  self.inputs[1]->accumulate(self.grad);
                                });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_extents(a, b, "sub");
  RowMatrix<Scalar> out = a.value() - b.value();
  return detail::record<Scalar>(a.shape(), std::move(out), "sub", {a, b},
                                [](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(self.grad);
                                  self.inputs[1]->accumulate(-self.grad);
                                });
}

/// Hadamard product.
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_extents(a, b, "mul");
  RowMatrix<Scalar> out = a.value().cwiseProduct(b.value());
  return detail::record<Scalar>(a.shape(), std::move(out), "mul", {a, b},
                                [](TensorNode<Scalar>& self) {
                                  auto& lhs = *self.inputs[0];
                                  auto& rhs = *self.inputs[1];
                                  if (lhs.requires_grad) lhs.accumulate(self.grad.cwiseProduct(rhs.value));
                                  if (rhs.requires_grad) rhs.accumulate(self.grad.cwiseProduct(lhs.value));
                                });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  RowMatrix<Scalar> out = a.value() * factor;
  return detail::record<Scalar>(a.shape(), std::move(out), "scale", {a},
                                [factor](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(self.grad * factor);
                                });
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar offset) {
  RowMatrix<Scalar> out = a.value().array() + offset;
  return detail::record<Scalar>(a.shape(), std::move(out), "add_scalar", {a},
                                [](TensorNode<Scalar>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, Scalar factor) {
  return scale(a, factor);
}
template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar factor, const BasicTensor<Scalar>& a) {
  return scale(a, factor);
}

/// Adds `pattern` [p x n] to every consecutive block of p rows of x [(g*p) x n].
template <typename Scalar>
BasicTensor<Scalar> add_tiled(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& pattern) {
  const Index p = pattern.rows();
  if (pattern.cols() != x.cols() || p == 0 || x.rows() % p != 0) {
    throw ValidationError("add_tiled: cannot tile " + shape_string(pattern.shape()) + " over " +
                          shape_string(x.shape()));
  }
  RowMatrix<Scalar> out = x.value();
  const Index groups = x.rows() / p;
  for (Index g = 0; g < groups; ++g) out.middleRows(g * p, p) += pattern.value();
  return detail::record<Scalar>(x.shape(), std::move(out), "add_tiled", {x, pattern},
                                [p, groups](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(self.grad);
                                  auto& pat = *self.inputs[1];
                                  if (!pat.requires_grad) return;
                                  RowMatrix<Scalar> acc = RowMatrix<Scalar>::Zero(p, self.grad.cols());
                                  for (Index g = 0; g < groups; ++g) acc += self.grad.middleRows(g * p, p);
                                  pat.accumulate(acc);
                                });
}

/// Broadcasts a bias row [1 x n] over every row of x.
template <typename Scalar>
BasicTensor<Scalar> add_row(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& bias) {
  if (bias.rows() != 1) {
    throw ValidationError("add_row: bias must be a single row, got " + shape_string(bias.shape()));
  }
  return add_tiled(x, bias);
}

/// Multiplies row r of x by c(r, 0); c is [rows x 1].
template <typename Scalar>
BasicTensor<Scalar> scale_rows(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& c) {
  if (c.cols() != 1 || c.rows() != x.rows()) {
    throw ValidationError("scale_rows: factor " + shape_string(c.shape()) + " incompatible with " +
                          shape_string(x.shape()));
  }
  RowMatrix<Scalar> out = (x.value().array().colwise() * c.value().col(0).array()).matrix();
  return detail::record<Scalar>(x.shape(), std::move(out), "scale_rows", {x, c},
                                [](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  auto& factor = *self.inputs[1];
                                  if (in.requires_grad) {
                                    in.accumulate((self.grad.array().colwise() *
                                                   factor.value.col(0).array())
                                                      .matrix());
                                  }
                                  if (factor.requires_grad) {
                                    factor.accumulate(
                                        self.grad.cwiseProduct(in.value).rowwise().sum());
                                  }
                                });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  RowMatrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  return detail::record<Scalar>(x.shape(), std::move(out), "relu", {x},
                                [](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate((in.value.array() > Scalar(0))
                                                    .select(self.grad.array(), Scalar(0))
                                                    .matrix());
                                });
}

/// Exact (erf) GELU.
template <typename Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  RowMatrix<Scalar> out = x.value().unaryExpr([inv_sqrt2](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
  });
  return detail::record<Scalar>(x.shape(), std::move(out), "gelu", {x},
                                [inv_sqrt2](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  const Scalar inv_sqrt_2pi =
                                      Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
                                  RowMatrix<Scalar> d = in.value.unaryExpr([&](Scalar v) {
                                    return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) +
                                           v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
                                  });
                                  in.accumulate(self.grad.cwiseProduct(d));
                                });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& x) {
  RowMatrix<Scalar> out = x.value().array().exp().matrix();
  return detail::record<Scalar>(x.shape(), out, "exp", {x}, [out](TensorNode<Scalar>& self) {
    self.inputs[0]->accumulate(self.grad.cwiseProduct(out));
  });
}

/// Natural log; every entry must be strictly positive.
template <typename Scalar>
BasicTensor<Scalar> log(const BasicTensor<Scalar>& x) {
  if (!(x.value().array() > Scalar(0)).all()) throw NumericError("log: non-positive input");
  RowMatrix<Scalar> out = x.value().array().log().matrix();
  return detail::record<Scalar>(x.shape(), std::move(out), "log", {x},
                                [](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate(self.grad.cwiseQuotient(in.value));
                                });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

/// Row-wise softmax(x / temperature), max-subtracted.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& x, Scalar temperature = Scalar(1)) {
  detail::require_positive_temperature(temperature, "softmax");
  if (!x.value().allFinite()) throw NumericError("softmax: non-finite input");
  RowMatrix<Scalar> out = x.value() / temperature;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return detail::record<Scalar>(x.shape(), out, "softmax", {x},
                                [out, temperature](TensorNode<Scalar>& self) {
                                  RowMatrix<Scalar> gy = self.grad.cwiseProduct(out);
                                  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
                                  RowMatrix<Scalar> gx =
                                      (gy - (out.array().colwise() * dots.array()).matrix()) / temperature;
                                  self.inputs[0]->accumulate(gx);
                                });
}

/// Row-wise log(softmax(x / temperature)).
template <typename Scalar>
BasicTensor<Scalar> log_softmax(const BasicTensor<Scalar>& x, Scalar temperature = Scalar(1)) {
  detail::require_positive_temperature(temperature, "log_softmax");
  if (!x.value().allFinite()) throw NumericError("log_softmax: non-finite input");
  RowMatrix<Scalar> out = x.value() / temperature;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  return detail::record<Scalar>(x.shape(), out, "log_softmax", {x},
                                [out, temperature](TensorNode<Scalar>& self) {
                                  RowMatrix<Scalar> probs = out.array().exp().matrix();
                                  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sums = self.grad.rowwise().sum();
                                  RowMatrix<Scalar> gx =
                                      (self.grad - (probs.array().colwise() * sums.array()).matrix()) /
                                      temperature;
                                  self.inputs[0]->accumulate(gx);
                                });
}

/// Row-wise layer norm with gain/bias rows [1 x n].
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& bias, Scalar eps = Scalar(1e-6)) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ValidationError("layer_norm: gain/bias must be [1 x " + std::to_string(n) + "]");
  }
  RowMatrix<Scalar> normalized(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    auto row = x.value().row(r);
    const Scalar mu = row.mean();
    const Scalar var = (row.array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    normalized.row(r) = (row.array() - mu) * inv_std(r);
  }
  RowMatrix<Scalar> out = (normalized.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return detail::record<Scalar>(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [normalized, inv_std](TensorNode<Scalar>& self) {
        auto& in = *self.inputs[0];
        auto& g = *self.inputs[1];
        auto& b = *self.inputs[2];
        if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
        if (g.requires_grad) g.accumulate(self.grad.cwiseProduct(normalized).colwise().sum());
        if (!in.requires_grad) return;
        RowMatrix<Scalar> dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_d = dxhat.rowwise().mean();
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dx = dxhat.cwiseProduct(normalized).rowwise().mean();
        RowMatrix<Scalar> dx = dxhat;
        dx.colwise() -= mean_d;
        dx -= (normalized.array().colwise() * mean_dx.array()).matrix();
        dx = (dx.array().colwise() * inv_std.array()).matrix();
        in.accumulate(dx);
      });
}

/// Row-wise x / ||x||_2. Zero rows are rejected.
template <typename Scalar>
BasicTensor<Scalar> l2_normalize(const BasicTensor<Scalar>& x) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = x.value().rowwise().norm();
  if (!(norms.array() > Scalar(0)).all()) throw ValidationError("l2_normalize: zero-norm row");
  RowMatrix<Scalar> out = (x.value().array().colwise() / norms.array()).matrix();
  return detail::record<Scalar>(x.shape(), out, "l2_normalize", {x},
                                [out, norms](TensorNode<Scalar>& self) {
                                  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots =
                                      self.grad.cwiseProduct(out).rowwise().sum();
                                  RowMatrix<Scalar> gx =
                                      self.grad - (out.array().colwise() * dots.array()).matrix();
                                  gx = (gx.array().colwise() / norms.array()).matrix();
                                  self.inputs[0]->accumulate(gx);
                                });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& x) {
  RowMatrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return detail::record<Scalar>(Shape{}, std::move(out), "sum", {x}, [](TensorNode<Scalar>& self) {
    auto& in = *self.inputs[0];
    in.accumulate(RowMatrix<Scalar>::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& x) {
  if (x.numel() == 0) throw ValidationError("mean of empty tensor");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.numel());
  RowMatrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum() * inv;
  return detail::record<Scalar>(Shape{}, std::move(out), "mean", {x},
                                [inv](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate(RowMatrix<Scalar>::Constant(
                                      in.value.rows(), in.value.cols(), self.grad(0, 0) * inv));
                                });
}

/// Mean over rows: [m x n] -> [1 x n].
template <typename Scalar>
BasicTensor<Scalar> col_mean(const BasicTensor<Scalar>& x) {
  if (x.rows() == 0) throw ValidationError("col_mean of empty tensor");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.rows());
  RowMatrix<Scalar> out = x.value().colwise().sum() * inv;
  return detail::record<Scalar>(detail::matrix_shape(1, x.cols()), std::move(out), "col_mean", {x},
                                [inv](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate((self.grad * inv).replicate(in.value.rows(), 1));
                                });
}

/// Sum over columns: [m x n] -> [m x 1].
template <typename Scalar>
BasicTensor<Scalar> row_sum(const BasicTensor<Scalar>& x) {
  RowMatrix<Scalar> out = x.value().rowwise().sum();
  return detail::record<Scalar>(detail::matrix_shape(x.rows(), 1), std::move(out), "row_sum", {x},
                                [](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate(self.grad.replicate(1, in.value.cols()));
                                });
}

/// Mean over consecutive groups of `group` rows: [(g*group) x n] -> [g x n].
template <typename Scalar>
BasicTensor<Scalar> segment_mean(const BasicTensor<Scalar>& x, Index group) {
  if (group <= 0 || x.rows() % group != 0) {
    throw ValidationError("segment_mean: " + std::to_string(x.rows()) + " rows not divisible by " +
                          std::to_string(group));
  }
  const Index groups = x.rows() / group;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(group);
  RowMatrix<Scalar> out(groups, x.cols());
  for (Index g = 0; g < groups; ++g) out.row(g) = x.value().middleRows(g * group, group).colwise().sum() * inv;
  return detail::record<Scalar>(detail::matrix_shape(groups, x.cols()), std::move(out),
                                "segment_mean", {x}, [group, groups, inv](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  RowMatrix<Scalar> gx(in.value.rows(), in.value.cols());
                                  for (Index g = 0; g < groups; ++g)
                                    gx.middleRows(g * group, group) =
                                        (self.grad.row(g) * inv).replicate(group, 1);
                                  in.accumulate(gx);
                                });
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ValidationError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  auto [rows, cols] = detail::matrix_extents(shape);
  RowMatrix<Scalar> out = Eigen::Map<const RowMatrix<Scalar>>(x.value().data(), rows, cols);
  return detail::record<Scalar>(std::move(shape), std::move(out), "reshape", {x},
                                [](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  in.accumulate(Eigen::Map<const RowMatrix<Scalar>>(
                                      self.grad.data(), in.value.rows(), in.value.cols()));
                                });
}

template <typename Scalar>
BasicTensor<Scalar> concat_rows(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ValidationError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  RowMatrix<Scalar> out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return BasicTensor<Scalar>::from_op(detail::matrix_shape(rows, cols), std::move(out), "concat_rows",
                                      parts, [offsets](TensorNode<Scalar>& self) {
                                        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                          auto& in = *self.inputs[i];
                                          if (in.requires_grad)
                                            in.accumulate(self.grad.middleRows(offsets[i], in.value.rows()));
                                        }
                                      });
}

template <typename Scalar>
BasicTensor<Scalar> concat_rows(std::initializer_list<BasicTensor<Scalar>> parts) {
  std::vector<BasicTensor<Scalar>> list(parts);
  return concat_rows(std::span<const BasicTensor<Scalar>>(list));
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ValidationError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  RowMatrix<Scalar> out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return BasicTensor<Scalar>::from_op(detail::matrix_shape(rows, cols), std::move(out), "concat_cols",
                                      parts, [offsets](TensorNode<Scalar>& self) {
                                        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                          auto& in = *self.inputs[i];
                                          if (in.requires_grad)
                                            in.accumulate(self.grad.middleCols(offsets[i], in.value.cols()));
                                        }
                                      });
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(std::initializer_list<BasicTensor<Scalar>> parts) {
  std::vector<BasicTensor<Scalar>> list(parts);
  return concat_cols(std::span<const BasicTensor<Scalar>>(list));
}

/// Rows of x at `index` (repeats allowed).
template <typename Scalar>
BasicTensor<Scalar> gather_rows(const BasicTensor<Scalar>& x, std::vector<Index> index) {
  RowMatrix<Scalar> out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw ValidationError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.value().row(index[i]);
  }
  return detail::record<Scalar>(std::move(out),
                                "gather_rows", {x}, [index](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  RowMatrix<Scalar> gx = RowMatrix<Scalar>::Zero(in.value.rows(), in.value.cols());
                                  for (std::size_t i = 0; i < index.size(); ++i)
                                    gx.row(index[i]) += self.grad.row(static_cast<Index>(i));
                                  in.accumulate(gx);
                                });
}

/// Columns [start, start + count).
template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ValidationError("slice_cols: range out of bounds for " + shape_string(x.shape()));
  }
  RowMatrix<Scalar> out = x.value().middleCols(start, count);
  return detail::record<Scalar>(detail::matrix_shape(x.rows(), count), std::move(out), "slice_cols", {x},
                                [start, count](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  RowMatrix<Scalar> gx = RowMatrix<Scalar>::Zero(in.value.rows(), in.value.cols());
                                  gx.middleCols(start, count) = self.grad;
                                  in.accumulate(gx);
                                });
}

/// Inserts `row` [1 x n] before each consecutive group of `group` rows of x.
/// Used to prepend the class token to every sequence in a flattened batch.
template <typename Scalar>
BasicTensor<Scalar> prepend_to_groups(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& row,
                                      Index group) {
  if (row.rows() != 1 || row.cols() != x.cols() || group <= 0 || x.rows() % group != 0) {
    throw ValidationError("prepend_to_groups: incompatible shapes " + shape_string(x.shape()) + ", " +
                          shape_string(row.shape()));
  }
  const Index groups = x.rows() / group;
  RowMatrix<Scalar> out(groups * (group + 1), x.cols());
  for (Index g = 0; g < groups; ++g) {
    out.row(g * (group + 1)) = row.value().row(0);
    out.middleRows(g * (group + 1) + 1, group) = x.value().middleRows(g * group, group);
  }
  return detail::record<Scalar>(std::move(out),
                                "prepend_to_groups", {x, row}, [group, groups](TensorNode<Scalar>& self) {
                                  auto& in = *self.inputs[0];
                                  auto& head = *self.inputs[1];
                                  if (in.requires_grad) {
                                    RowMatrix<Scalar> gx(in.value.rows(), in.value.cols());
                                    for (Index g = 0; g < groups; ++g)
                                      gx.middleRows(g * group, group) =
                                          self.grad.middleRows(g * (group + 1) + 1, group);
                                    in.accumulate(gx);
                                  }
                                  if (head.requires_grad) {
                                    RowMatrix<Scalar> gh = RowMatrix<Scalar>::Zero(1, head.value.cols());
                                    for (Index g = 0; g < groups; ++g) gh += self.grad.row(g * (group + 1));
                                    head.accumulate(gh);
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head scaled dot-product attention over a flattened batch.
///
/// q, k, v are [(batch * seq_len) x d]; head h owns columns
/// [h * d / heads, (h + 1) * d / heads). If `attention_out` is non-null it
/// receives the [heads * seq_len x seq_len] attention map for every sample,
/// stacked sample-major.
template <typename Scalar>
BasicTensor<Scalar> multi_head_attention(const BasicTensor<Scalar>& q, const BasicTensor<Scalar>& k,
                                         const BasicTensor<Scalar>& v, Index seq_len, Index heads,
                                         std::vector<RowMatrix<Scalar>>* attention_out = nullptr) {
  detail::require_same_extents(q, k, "multi_head_attention");
  detail::require_same_extents(q, v, "multi_head_attention");
  const Index d = q.cols();
  if (heads <= 0 || d % heads != 0) throw ValidationError("multi_head_attention: d not divisible by heads");
  if (seq_len <= 0 || q.rows() % seq_len != 0) throw ValidationError("multi_head_attention: bad seq_len");
  const Index dh = d / heads;
  const Index batch = q.rows() / seq_len;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  // One attention map per (sample, head), kept for the backward rule.
  std::vector<RowMatrix<Scalar>> maps(static_cast<std::size_t>(batch * heads));
  RowMatrix<Scalar> out(q.rows(), d);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto qb = q.value().block(b * seq_len, h * dh, seq_len, dh);
      auto kb = k.value().block(b * seq_len, h * dh, seq_len, dh);
      auto vb = v.value().block(b * seq_len, h * dh, seq_len, dh);
      RowMatrix<Scalar> scores = (qb * kb.transpose()) * inv_sqrt;
      for (Index r = 0; r < seq_len; ++r) {
        auto row = scores.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
      }
      out.block(b * seq_len, h * dh, seq_len, dh) = scores * vb;
      maps[static_cast<std::size_t>(b * heads + h)] = std::move(scores);
    }
  }
  if (attention_out) *attention_out = maps;
  return detail::record<Scalar>(
      q.shape(), std::move(out), "multi_head_attention", {q, k, v},
      [maps = std::move(maps), seq_len, heads, dh, batch, inv_sqrt](TensorNode<Scalar>& self) {
        auto& qn = *self.inputs[0];
        auto& kn = *self.inputs[1];
        auto& vn = *self.inputs[2];
        RowMatrix<Scalar> gq = RowMatrix<Scalar>::Zero(qn.value.rows(), qn.value.cols());
        RowMatrix<Scalar> gk = RowMatrix<Scalar>::Zero(qn.value.rows(), qn.value.cols());
        RowMatrix<Scalar> gv = RowMatrix<Scalar>::Zero(qn.value.rows(), qn.value.cols());
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const auto& a = maps[static_cast<std::size_t>(b * heads + h)];
            auto go = self.grad.block(b * seq_len, h * dh, seq_len, dh);
            auto qb = qn.value.block(b * seq_len, h * dh, seq_len, dh);
            auto kb = kn.value.block(b * seq_len, h * dh, seq_len, dh);
            auto vb = vn.value.block(b * seq_len, h * dh, seq_len, dh);
            gv.block(b * seq_len, h * dh, seq_len, dh) = a.transpose() * go;
            RowMatrix<Scalar> ga = go * vb.transpose();
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = ga.cwiseProduct(a).rowwise().sum();
            RowMatrix<Scalar> gs = a.cwiseProduct(ga - dots.replicate(1, seq_len)) * inv_sqrt;
            gq.block(b * seq_len, h * dh, seq_len, dh) = gs * kb;
            gk.block(b * seq_len, h * dh, seq_len, dh) = gs.transpose() * qb;
          }
        }
        qn.accumulate(gq);
        kn.accumulate(gk);
        vn.accumulate(gv);
      });
}

// ---------------------------------------------------------------------------
// Divergences

namespace detail {
template <typename Derived>
bool on_simplex(const Eigen::MatrixBase<Derived>& p, double tol) {
  return p.size() > 0 && (p.array() >= 0).all() && std::abs(static_cast<double>(p.sum()) - 1.0) <= tol;
}
}  // namespace detail

inline constexpr double kSimplexTolerance = 1e-9;

/// D_KL(p || q) = sum_t p_t ln(p_t / q_t) with 0 ln(0/q) = 0.
///
/// p is a [1 x n] tensor; q is a constant target. Differentiated with
/// respect to p only.
template <typename Scalar>
BasicTensor<Scalar> kl_divergence(const BasicTensor<Scalar>& p, const std::type_identity_t<RowVector<Scalar>>& q) {
  if (p.rows() != 1 || p.cols() != q.cols()) {
    throw ValidationError("kl_divergence: shape mismatch " + shape_string(p.shape()) + " vs [" +
                          std::to_string(q.cols()) + "]");
  }
  if (!detail::on_simplex(p.value(), kSimplexTolerance)) throw ValidationError("kl_divergence: p is not on the simplex");
  if (!detail::on_simplex(q, kSimplexTolerance)) throw ValidationError("kl_divergence: q is not on the simplex");
  const auto& pv = p.value();
  Scalar total = 0;
  RowMatrix<Scalar> dp = RowMatrix<Scalar>::Zero(1, pv.cols());
  for (Index t = 0; t < pv.cols(); ++t) {
    if (pv(0, t) == Scalar(0)) continue;
    if (q(t) == Scalar(0)) throw NumericError("kl_divergence: infinite divergence (q_t = 0 where p_t > 0)");
    const Scalar lr = std::log(pv(0, t) / q(t));
    total += pv(0, t) * lr;
    dp(0, t) = lr + Scalar(1);
  }
  RowMatrix<Scalar> out(1, 1);
  out(0, 0) = total;
  return detail::record<Scalar>(Shape{}, std::move(out), "kl_divergence", {p},
                                [dp](TensorNode<Scalar>& self) {
                                  self.inputs[0]->accumulate(dp * self.grad(0, 0));
                                });
}

}  // namespace gcdkit
