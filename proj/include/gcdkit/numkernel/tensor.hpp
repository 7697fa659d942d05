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

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gcdkit/error.hpp"

namespace gcdkit {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = RowMatrix<double>;
using Vector = RowVector<double>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

namespace detail {
inline thread_local bool grad_mode_enabled = true;

// Every tensor is stored as a row-major matrix: leading extents fold into
// rows, the last extent is the column count. Scalars are 1x1.
inline std::pair<Index, Index> matrix_extents(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  Index cols = shape.back();
  Index rows = shape.size() == 1 ? 1 : shape_numel(Shape(shape.begin(), shape.end() - 1));
  return {rows, cols};
}
}  // namespace detail

/// Disables operation recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_enabled; }

template <typename Scalar>
struct TensorNode {
  using MatrixType = RowMatrix<Scalar>;

  Shape shape;
  MatrixType value;
  MatrixType grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  bool input_needs_grad(std::size_t i) const { return inputs[i]->requires_grad; }

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Dense value with an optional differentiation record.
///
/// A tensor is a shared handle: copies alias the same node. Operations that
/// consume a grad-requiring tensor record themselves on their result, which is
/// how the graph gets built (record-by-execution).
template <typename Scalar>
class BasicTensor {
 public:
  using MatrixType = RowMatrix<Scalar>;
  using Node = TensorNode<Scalar>;

  BasicTensor() = default;

  explicit BasicTensor(MatrixType value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->shape = Shape{value.rows(), value.cols()};
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad = MatrixType::Zero(node_->value.rows(), node_->value.cols());
  }

  BasicTensor(Shape shape, MatrixType value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != value.size()) {
      throw ValidationError("tensor shape " + shape_string(shape) + " does not match " +
                            std::to_string(value.size()) + " stored values");
    }
    auto [rows, cols] = detail::matrix_extents(shape);
    if (value.rows() != rows || value.cols() != cols) value.resize(rows, cols);
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad = MatrixType::Zero(node_->value.rows(), node_->value.cols());
  }

  static BasicTensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return BasicTensor(MatrixType::Zero(rows, cols), requires_grad);
  }

  static BasicTensor scalar(Scalar v) {
    MatrixType m(1, 1);
    m(0, 0) = v;
    return BasicTensor(Shape{}, std::move(m));
  }

  /// Result of an operation. Inputs and the backward rule are only retained
  /// when recording is enabled and some input requires a gradient.
  static BasicTensor from_op(Shape shape, MatrixType value, std::string op,
                             std::span<const BasicTensor> inputs,
                             std::function<void(Node&)> backward) {
    BasicTensor out(std::move(shape), std::move(value));
    bool record = grad_mode_enabled();
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    out.node_->op = std::move(op);
    if (record && needs) {
      out.node_->requires_grad = true;
      out.node_->inputs.reserve(inputs.size());
      for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index numel() const { return node_->value.size(); }

  const MatrixType& value() const { return node_->value; }
  /// Direct write access, for optimizers and finite-difference probes.
  MatrixType& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->op == "leaf"; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const MatrixType& grad() const { return node_->grad; }
  MatrixType& mutable_grad() { return node_->grad; }
  const std::string& op() const { return node_->op; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.setZero(node_->value.rows(), node_->value.cols());
  }

  Scalar item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }

  /// Same values, no history.
  BasicTensor detach() const { return BasicTensor(node_->shape, node_->value); }

  std::size_t input_count() const { return node_->inputs.size(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<double>;

/// Topologically ordered view of the grad-requiring operations that produced
/// a tensor. Each node appears after all of its inputs.
template <typename Scalar>
class BasicGraph {
 public:
  using Node = TensorNode<Scalar>;

  static BasicGraph record(const BasicTensor<Scalar>& root) {
    BasicGraph graph;
    if (!root.defined() || !root.requires_grad()) return graph;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS; deep graphs would overflow a recursive walk.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        graph.order_.push_back(node);
        stack.pop_back();
      }
    }
    return graph;
  }

  std::span<Node* const> nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::size_t operation_count() const {
    std::size_t n = 0;
    for (const Node* node : order_) n += node->backward ? 1 : 0;
    return n;
  }

  /// Runs every recorded backward rule once, outputs before inputs.
  /// Returns the number of operations visited.
  std::size_t run_backward() const {
    std::size_t visited = 0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node* node = *it;
      if (!node->backward || node->grad.size() == 0) continue;
      node->backward(*node);
      ++visited;
    }
    return visited;
  }

 private:
  std::vector<Node*> order_;
};

using Graph = BasicGraph<double>;

/// Accumulates d(loss)/d(t) into every grad-requiring ancestor t.
template <typename Scalar>
std::size_t backward(const BasicTensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ValidationError("backward requires a scalar loss, got shape " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return 0;
  auto graph = BasicGraph<Scalar>::record(loss);
  loss.node()->accumulate(RowMatrix<Scalar>::Ones(1, 1));
  return graph.run_backward();
}

}  // namespace gcdkit
