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
#include <span>
#include <vector>

#include "gcdkit/backbone.hpp"

namespace gcdkit {

/// Constants of the SimGCD objective.
struct LossWeights {
  double lambda = 0.35;         // supervised/unsupervised mix
  double entropy = 1.0;         // epsilon
  double tau_u = 0.07;          // self-supervised contrastive
  double tau_c = 0.07;          // supervised contrastive
  double tau_s = 0.1;           // student
  double tau_teacher = 0.05;    // pseudo-label sharpening

  void validate() const;
};

/// g(.): Linear -> ReLU -> Linear, output l2-normalized.
struct ProjectionHead {
  Tensor fc1_weight, fc1_bias;  // [hidden x d], [1 x hidden]
  Tensor fc2_weight, fc2_bias;  // [proj x hidden], [1 x proj]

  static ProjectionHead init(int embed_dim, int hidden, int proj_dim, std::uint64_t seed);
  Tensor forward(const Tensor& features) const;
  std::vector<NamedTensor> named() const;
  std::int64_t parameter_count() const;
};

/// Learnable class prototypes c_1..c_K, [K x d].
struct Prototypes {
  Tensor centers;

  static Prototypes init(int num_classes, int embed_dim, std::uint64_t seed);
  int num_classes() const { return static_cast<int>(centers.rows()); }
};

/// Two augmented views of one mini-batch. Views are flattened token
/// sequences, [(batch * tokens) x input_dim].
struct BatchViews {
  Tensor view1, view2;
  std::vector<int> ids;
  std::vector<int> labels;      // -1 where unlabeled
  std::vector<std::uint8_t> labeled;
  std::vector<int> truths;      // hidden ground truth, for oracle-label diagnostics only

  int size() const { return static_cast<int>(ids.size()); }
  int labeled_count() const;
};

/// Self-supervised InfoNCE between z (anchors) and z' (candidates).
/// Rows must be unit norm.
Tensor rep_loss_unsup(const Tensor& z, const Tensor& z_prime, double tau_u);

/// Supervised contrastive loss over labeled anchors; positives are other
/// labeled samples with the same label. Anchors without positives add zero.
Tensor rep_loss_sup(const Tensor& z, const Tensor& z_prime, std::span<const int> labels,
                    std::span<const std::uint8_t> labeled, double tau_c);

/// Cosine similarities between rows of h and the prototypes, [B x K].
Tensor prototype_cosine(const Tensor& h, const Prototypes& prototypes);

/// softmax(cos(h, c_k) / tau_s) over k.
Tensor predict(const Tensor& h, const Prototypes& prototypes, double tau_s);

/// Sharpened, detached targets: softmax(cos / tau_teacher) with no history.
Tensor teacher_targets(const Tensor& cosine, double tau_teacher);

struct ClsLosses {
  Tensor unsup;  // mean CE(q', p) - eps * H(p-bar)
  Tensor sup;    // mean CE(onehot(y), p) over labeled
  double entropy = 0;  // H(p-bar), for logging
};

/// p, p_prime: predictions of both views [B x K]; targets: detached q'.
ClsLosses cls_losses(const Tensor& p, const Tensor& p_prime, const Tensor& targets, std::span<const int> labels,
                     std::span<const std::uint8_t> labeled, double entropy_weight);

struct SimGcdLoss {
  Tensor total;
  Tensor rep_unsup, rep_sup, cls_unsup, cls_sup;
};

/// (1 - lambda) (L_rep^u + L_cls^u) + lambda (L_rep^s + L_cls^s).
SimGcdLoss mix_simgcd(Tensor rep_unsup, Tensor rep_sup, Tensor cls_unsup, Tensor cls_sup, double lambda);

struct SimGcdResult {
  SimGcdLoss loss;
  Tensor predictions;        // p, view 1
  Tensor predictions_prime;  // p', view 2
  Tensor targets;            // q', detached
};

/// Full SimGCD objective from the class-token features of both views.
/// `frozen_targets`, when given, replaces the teacher computation (used to
/// hold targets fixed under finite-difference probes).
SimGcdResult simgcd_loss(const Tensor& features, const Tensor& features_prime, const ProjectionHead& head,
                         const Prototypes& prototypes, const BatchViews& batch, const LossWeights& weights,
                         const Tensor* frozen_targets = nullptr);

}  // namespace gcdkit
