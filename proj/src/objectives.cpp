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

#include "gcdkit/objectives.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "gcdkit/numkernel/random.hpp"

namespace gcdkit {

namespace {

constexpr double kUnitNormTolerance = 1e-6;

void require_unit_rows(const Tensor& z, const char* op) {
  Eigen::VectorXd norms = z.value().rowwise().norm();
  if (((norms.array() - 1.0).abs() > kUnitNormTolerance).any()) {
    throw ValidationError(std::string(op) + ": features must be l2-normalized");
  }
}

void require_contrastive_pair(const Tensor& z, const Tensor& z_prime, const char* op) {
  if (z.rows() != z_prime.rows() || z.cols() != z_prime.cols()) {
    throw ValidationError(std::string(op) + ": view shapes differ");
  }
  if (z.rows() < 2) throw ValidationError(std::string(op) + ": batch of size < 2 has no negatives");
  require_unit_rows(z, op);
  require_unit_rows(z_prime, op);
}

// -sum(log_probs .* mask) / count
Tensor masked_nll(const Tensor& log_probs, Matrix mask, double count) {
  return scale(sum(mul(log_probs, Tensor(std::move(mask)))), -1.0 / count);
}

}  // namespace

void LossWeights::validate() const {
  if (!(tau_u > 0 && tau_c > 0 && tau_s > 0 && tau_teacher > 0)) {
    throw ValidationError("loss: all temperatures must be > 0");
  }
  if (!(lambda >= 0 && lambda <= 1)) throw ValidationError("loss: lambda must lie in [0, 1]");
  if (!(entropy >= 0)) throw ValidationError("loss: entropy weight must be >= 0");
}

ProjectionHead ProjectionHead::init(int embed_dim, int hidden, int proj_dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x9E4Du});
  ProjectionHead head;
  head.fc1_weight = Tensor(gaussian_matrix(hidden, embed_dim, 1.0 / std::sqrt(double(embed_dim)), rng), true);
  head.fc1_bias = Tensor(Matrix::Zero(1, hidden), true);
  head.fc2_weight = Tensor(gaussian_matrix(proj_dim, hidden, 1.0 / std::sqrt(double(hidden)), rng), true);
  head.fc2_bias = Tensor(Matrix::Zero(1, proj_dim), true);
  return head;
}

Tensor ProjectionHead::forward(const Tensor& features) const {
  Tensor hidden = relu(add_row(matmul_nt(features, fc1_weight), fc1_bias));
  return l2_normalize(add_row(matmul_nt(hidden, fc2_weight), fc2_bias));
}

std::vector<NamedTensor> ProjectionHead::named() const {
  return {{"head.fc1.weight", fc1_weight},
          {"head.fc1.bias", fc1_bias},
          {"head.fc2.weight", fc2_weight},
          {"head.fc2.bias", fc2_bias}};
}

std::int64_t ProjectionHead::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : named()) n += p.tensor.numel();
  return n;
}

Prototypes Prototypes::init(int num_classes, int embed_dim, std::uint64_t seed) {
  if (num_classes < 1) throw ValidationError("prototypes: need at least one class");
  Rng rng = make_rng(seed, {0xC1A55u});
  return {Tensor(gaussian_matrix(num_classes, embed_dim, 1.0, rng), true)};
}

int BatchViews::labeled_count() const {
  int n = 0;
  for (auto f : labeled) n += f ? 1 : 0;
  return n;
}

Tensor rep_loss_unsup(const Tensor& z, const Tensor& z_prime, double tau_u) {
  require_contrastive_pair(z, z_prime, "rep_loss_unsup");
  const Index n = z.rows();
  Tensor log_probs = log_softmax(matmul_nt(z, z_prime), tau_u);
  return masked_nll(log_probs, Matrix::Identity(n, n), static_cast<double>(n));
}

Tensor rep_loss_sup(const Tensor& z, const Tensor& z_prime, std::span<const int> labels,
                    std::span<const std::uint8_t> labeled, double tau_c) {
  require_contrastive_pair(z, z_prime, "rep_loss_sup");
  const Index n = z.rows();
  if (labels.size() != static_cast<std::size_t>(n) || labeled.size() != static_cast<std::size_t>(n)) {
    throw ValidationError("rep_loss_sup: label/mask length must equal batch size");
  }
  Matrix mask = Matrix::Zero(n, n);
  Index anchors = 0;
  for (Index i = 0; i < n; ++i) {
    if (!labeled[i]) continue;
    ++anchors;
    for (Index q = 0; q < n; ++q) {
      if (q != i && labeled[q] && labels[q] == labels[i]) mask(i, q) = 1.0;
    }
  }
  if (anchors == 0) {
    spdlog::warn("rep_loss_sup: batch has no labeled samples, loss defined as 0");
    return Tensor::scalar(0.0);
  }
  Tensor log_probs = log_softmax(matmul_nt(z, z_prime), tau_c);
  return masked_nll(log_probs, std::move(mask), static_cast<double>(anchors));
}

Tensor prototype_cosine(const Tensor& h, const Prototypes& prototypes) {
  if (h.cols() != prototypes.centers.cols()) throw ValidationError("predict: feature/prototype dims differ");
  if (!(h.value().rowwise().norm().array() > 0).all()) throw ValidationError("predict: zero-norm feature");
  if (!(prototypes.centers.value().rowwise().norm().array() > 0).all()) {
    throw ValidationError("predict: zero-norm prototype");
  }
  return matmul_nt(l2_normalize(h), l2_normalize(prototypes.centers));
}

Tensor predict(const Tensor& h, const Prototypes& prototypes, double tau_s) {
  return softmax(prototype_cosine(h, prototypes), tau_s);
}

Tensor teacher_targets(const Tensor& cosine, double tau_teacher) {
  NoGradGuard no_grad;
  return softmax(cosine.detach(), tau_teacher).detach();
}

ClsLosses cls_losses(const Tensor& p, const Tensor& p_prime, const Tensor& targets, std::span<const int> labels,
                     std::span<const std::uint8_t> labeled, double entropy_weight) {
  if (entropy_weight < 0) throw ValidationError("cls_losses: entropy weight must be >= 0");
  if (p.rows() != p_prime.rows() || p.cols() != p_prime.cols() || targets.rows() != p.rows() ||
      targets.cols() != p.cols()) {
    throw ValidationError("cls_losses: prediction/target shapes differ");
  }
  const Index n = p.rows();
  const Index k = p.cols();
  if (labels.size() != static_cast<std::size_t>(n) || labeled.size() != static_cast<std::size_t>(n)) {
    throw ValidationError("cls_losses: label/mask length must equal batch size");
  }
  Tensor log_p = log(p);
  Tensor cross = masked_nll(log_p, targets.value(), static_cast<double>(n));

  Tensor mean_pred = col_mean(concat_rows({p, p_prime}));
  Tensor entropy = scale(sum(mul(mean_pred, log(mean_pred))), -1.0);

  ClsLosses out;
  out.entropy = entropy.item();
  out.unsup = sub(cross, scale(entropy, entropy_weight));

  Matrix onehot = Matrix::Zero(n, k);
  Index count = 0;
  for (Index i = 0; i < n; ++i) {
    if (!labeled[i]) continue;
    if (labels[i] < 0 || labels[i] >= k) throw ValidationError("cls_losses: label out of range");
    onehot(i, labels[i]) = 1.0;
    ++count;
  }
  out.sup = count ? masked_nll(log_p, std::move(onehot), static_cast<double>(count)) : Tensor::scalar(0.0);
  return out;
}

SimGcdLoss mix_simgcd(Tensor rep_unsup, Tensor rep_sup, Tensor cls_unsup, Tensor cls_sup, double lambda) {
  SimGcdLoss out{Tensor(), std::move(rep_unsup), std::move(rep_sup), std::move(cls_unsup), std::move(cls_sup)};
  Tensor rep = add(scale(out.rep_unsup, 1.0 - lambda), scale(out.rep_sup, lambda));
  Tensor cls = add(scale(out.cls_unsup, 1.0 - lambda), scale(out.cls_sup, lambda));
  out.total = add(rep, cls);
  return out;
}

SimGcdResult simgcd_loss(const Tensor& features, const Tensor& features_prime, const ProjectionHead& head,
                         const Prototypes& prototypes, const BatchViews& batch, const LossWeights& weights,
                         const Tensor* frozen_targets) {
  weights.validate();
  Tensor z = head.forward(features);
  Tensor z_prime = head.forward(features_prime);
  Tensor rep_u = rep_loss_unsup(z, z_prime, weights.tau_u);
  Tensor rep_s = batch.labeled_count() > 0 ? rep_loss_sup(z, z_prime, batch.labels, batch.labeled, weights.tau_c)
                                           : Tensor::scalar(0.0);

  Tensor cosine = prototype_cosine(features, prototypes);
  Tensor cosine_prime = prototype_cosine(features_prime, prototypes);
  SimGcdResult out;
  out.predictions = softmax(cosine, weights.tau_s);
  out.predictions_prime = softmax(cosine_prime, weights.tau_s);
  out.targets = frozen_targets ? frozen_targets->detach() : teacher_targets(cosine_prime, weights.tau_teacher);
  auto cls = cls_losses(out.predictions, out.predictions_prime, out.targets, batch.labels, batch.labeled,
                        weights.entropy);
  out.loss = mix_simgcd(rep_u, rep_s, cls.unsup, cls.sup, weights.lambda);
  return out;
}

}  // namespace gcdkit
