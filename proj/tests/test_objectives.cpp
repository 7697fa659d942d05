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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/QR>

#include "gcdkit/objectives.hpp"
#include "oracles.hpp"

using namespace gcdkit;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix unit_rows(Index n, Index d, Rng& rng) {
  Matrix m = gaussian_matrix(n, d, 1.0, rng);
  m.rowwise().normalize();
  return m;
}

Matrix random_rotation(Index d, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian_matrix(d, d, 1.0, rng)));
  return Matrix(qr.householderQ());
}

}  // namespace

TEST_CASE("rep_loss_unsup: aligned positive, orthogonal negatives") {
  Tensor z(rows({{1, 0}, {0, 1}}));
  const double loss = rep_loss_unsup(z, z, 1.0).item();
  const double e = std::exp(1.0);
  CHECK(loss == doctest::Approx(-std::log(e / (e + 1))).epsilon(1e-14));
  CHECK(std::abs(loss - 0.3133) < 1e-4);
}

TEST_CASE("rep_loss_unsup: identical features") {
  // The positive sits in the denominator, so by symmetry every one of the
  // |B| candidates is equally likely.
  for (int n : {2, 5, 9}) {
    Tensor z(Matrix::Ones(n, 1));
    CHECK(rep_loss_unsup(z, z, 0.07).item() == doctest::Approx(std::log(double(n))).epsilon(1e-12));
  }
}

TEST_CASE("rep_loss_unsup is invariant to a joint rotation") {
  Rng rng = make_rng(1);
  Matrix z = unit_rows(6, 5, rng), zp = unit_rows(6, 5, rng);
  Matrix r = random_rotation(5, rng);
  const double a = rep_loss_unsup(Tensor(z), Tensor(zp), 0.1).item();
  const double b = rep_loss_unsup(Tensor(z * r), Tensor(zp * r), 0.1).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("rep_loss_unsup rejects bad inputs") {
  CHECK_THROWS_AS(rep_loss_unsup(Tensor(rows({{1, 0}})), Tensor(rows({{1, 0}})), 1.0), ValidationError);
  CHECK_THROWS_AS(rep_loss_unsup(Tensor(rows({{2, 0}, {0, 1}})), Tensor(rows({{1, 0}, {0, 1}})), 1.0),
                  ValidationError);
}

TEST_CASE("rep_loss_sup: single aligned positive, orthogonal negatives, 3 samples") {
  Tensor z(rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  Tensor zp(rows({{0, 1, 0}, {1, 0, 0}, {0, 0, 1}}));
  std::vector<int> labels{4, 4, -1};
  std::vector<std::uint8_t> labeled{1, 1, 0};
  const double e = std::exp(1.0);
  CHECK(rep_loss_sup(z, zp, labels, labeled, 1.0).item() == doctest::Approx(-std::log(e / (e + 2))).epsilon(1e-14));
}

TEST_CASE("rep_loss_sup: distinct classes have no positives") {
  Rng rng = make_rng(2);
  Tensor z(unit_rows(4, 3, rng)), zp(unit_rows(4, 3, rng));
  std::vector<int> labels{0, 1, 2, 3};
  std::vector<std::uint8_t> labeled{1, 1, 1, 1};
  CHECK(rep_loss_sup(z, zp, labels, labeled, 0.1).item() == 0.0);
  std::vector<std::uint8_t> none{0, 0, 0, 0};
  CHECK(rep_loss_sup(z, zp, labels, none, 0.1).item() == 0.0);
}

TEST_CASE("rep_loss_sup reduces to rep_loss_unsup when each positive is the paired view") {
  // Pairs {2j, 2j+1} share a label; swapping the second views inside each
  // pair turns every supervised positive into the anchor's own pair view.
  Rng rng = make_rng(3);
  Matrix z = unit_rows(6, 4, rng), zp = unit_rows(6, 4, rng);
  Matrix swapped(6, 4);
  for (Index i = 0; i < 6; ++i) swapped.row(i ^ 1) = zp.row(i);
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  std::vector<std::uint8_t> labeled(6, 1);
  const double sup = rep_loss_sup(Tensor(z), Tensor(swapped), labels, labeled, 0.2).item();
  const double unsup = rep_loss_unsup(Tensor(z), Tensor(zp), 0.2).item();
  CHECK(sup == doctest::Approx(unsup).epsilon(1e-13));
}

TEST_CASE("predict examples") {
  Prototypes same{Tensor(Matrix::Ones(4, 3))};
  Tensor h(rows({{0.3, -0.2, 0.9}}));
  auto p = predict(h, same, 0.1).value();
  CHECK((p.array() - 0.25).abs().maxCoeff() < 1e-15);

  Prototypes axes{Tensor(Matrix::Identity(3, 3))};
  auto q = predict(Tensor(rows({{1, 0, 0}})), axes, 0.1).value();
  const double e10 = std::exp(10.0);
  CHECK(q(0, 0) == doctest::Approx(e10 / (e10 + 2)).epsilon(1e-14));
  CHECK(std::abs(q(0, 0) - 0.99991) < 1e-5);

  Rng rng = make_rng(4);
  Prototypes random{Tensor(gaussian_matrix(5, 3, 1.0, rng))};
  Matrix x = gaussian_matrix(4, 3, 1.0, rng);
  auto a = predict(Tensor(x), random, 0.1).value();
  auto b = predict(Tensor(5.0 * x), random, 0.1).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
}

TEST_CASE("predict rejects zero norms") {
  Prototypes axes{Tensor(Matrix::Identity(3, 3))};
  CHECK_THROWS_AS(predict(Tensor(Matrix::Zero(1, 3)), axes, 0.1), ValidationError);
  Matrix c = Matrix::Identity(3, 3);
  c.row(1).setZero();
  CHECK_THROWS_AS(predict(Tensor(rows({{1, 0, 0}})), Prototypes{Tensor(c)}, 0.1), ValidationError);
}

TEST_CASE("cls_losses examples") {
  const Index k = 10;
  Tensor uniform(Matrix::Constant(2, k, 0.1));
  std::vector<int> labels{3, -1};
  std::vector<std::uint8_t> labeled{1, 0};
  auto out = cls_losses(uniform, uniform, uniform, labels, labeled, 0.0);
  CHECK(out.sup.item() == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(std::abs(out.sup.item() - 2.3026) < 1e-4);
  // Mean prediction is uniform, the entropy maximum.
  CHECK(out.entropy == doctest::Approx(std::log(10.0)).epsilon(1e-14));

  // q' = p and eps = 0: self cross-entropy is the mean row entropy.
  Rng rng = make_rng(5);
  Tensor p = softmax(Tensor(gaussian_matrix(3, 4, 1.0, rng)), 1.0);
  std::vector<int> none{-1, -1, -1};
  std::vector<std::uint8_t> mask{0, 0, 0};
  auto self = cls_losses(p, p, p, none, mask, 0.0);
  double h = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) h -= p.value()(i, j) * std::log(p.value()(i, j)) / 3.0;
  CHECK(self.unsup.item() == doctest::Approx(h).epsilon(1e-13));
  CHECK(self.sup.item() == 0.0);
  CHECK_THROWS_AS(cls_losses(p, p, p, none, mask, -1.0), ValidationError);
}

TEST_CASE("the entropy term is maximized by a uniform mean prediction") {
  Rng rng = make_rng(6);
  std::vector<int> none{-1, -1};
  std::vector<std::uint8_t> mask{0, 0};
  Tensor uniform(Matrix::Constant(2, 5, 0.2));
  const double top = cls_losses(uniform, uniform, uniform, none, mask, 1.0).entropy;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = softmax(Tensor(gaussian_matrix(2, 5, 0.3, rng)), 1.0);
    CHECK(cls_losses(p, p, p, none, mask, 1.0).entropy < top);
  }
}

TEST_CASE("teacher targets are detached") {
  Rng rng = make_rng(7);
  Tensor logits(gaussian_matrix(3, 4, 1.0, rng), true);
  Tensor q = teacher_targets(logits, 0.05);
  CHECK_FALSE(q.requires_grad());
  CHECK(q.input_count() == 0);
  Tensor p = softmax(logits, 0.1);
  std::vector<int> none{-1, -1, -1};
  std::vector<std::uint8_t> mask{0, 0, 0};
  backward(cls_losses(p, p, q, none, mask, 0.0).unsup);
  // Only the student path reaches the logits; recompute it alone.
  Matrix analytic = logits.grad();
  logits.zero_grad();
  Tensor fixed(q.value());
  backward(cls_losses(softmax(logits, 0.1), softmax(logits, 0.1), fixed, none, mask, 0.0).unsup);
  CHECK((analytic - logits.grad()).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

struct ToyBatch {
  ProjectionHead head;
  Prototypes prototypes;
  Tensor f, fp;
  BatchViews batch;
};

ToyBatch toy(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  ToyBatch t;
  t.head = ProjectionHead::init(5, 6, 4, seed);
  t.prototypes = Prototypes::init(3, 5, seed);
  t.f = Tensor(gaussian_matrix(6, 5, 1.0, rng), true);
  t.fp = Tensor(gaussian_matrix(6, 5, 1.0, rng), true);
  t.batch.ids = {0, 1, 2, 3, 4, 5};
  t.batch.labels = {0, 0, 1, -1, -1, -1};
  t.batch.labeled = {1, 1, 1, 0, 0, 0};
  t.batch.truths = {0, 0, 1, 2, 1, 2};
  return t;
}

}  // namespace

TEST_CASE("simgcd_loss: random toy batch is finite and gradient-checks") {
  auto t = toy(8);
  LossWeights w;
  // Hold the teacher fixed so the objective is a smooth function of the
  // parameters under finite differences.
  Tensor targets = simgcd_loss(t.f, t.fp, t.head, t.prototypes, t.batch, w).targets;
  auto build = [&] { return simgcd_loss(t.f, t.fp, t.head, t.prototypes, t.batch, w, &targets).loss.total; };
  CHECK(std::isfinite(build().item()));
  std::vector<Tensor*> params{&t.f, &t.fp, &t.head.fc1_weight, &t.head.fc1_bias, &t.head.fc2_weight,
                              &t.head.fc2_bias, &t.prototypes.centers};
  CHECK(gcdkit::testing::gradient_error(build, params) < 1e-4);
}

TEST_CASE("simgcd_loss mixing endpoints and decomposition") {
  auto t = toy(9);
  LossWeights w;
  auto mixed = simgcd_loss(t.f, t.fp, t.head, t.prototypes, t.batch, w).loss;
  const double resum = (1 - w.lambda) * (mixed.rep_unsup.item() + mixed.cls_unsup.item()) +
                       w.lambda * (mixed.rep_sup.item() + mixed.cls_sup.item());
  CHECK(std::abs(mixed.total.item() - resum) < 1e-10);
  CHECK(mixed.rep_unsup.item() >= 0);
  CHECK(mixed.rep_sup.item() >= 0);
  CHECK(mixed.cls_sup.item() >= 0);

  w.lambda = 0;
  auto unsup = simgcd_loss(t.f, t.fp, t.head, t.prototypes, t.batch, w).loss;
  CHECK(unsup.total.item() == doctest::Approx(unsup.rep_unsup.item() + unsup.cls_unsup.item()).epsilon(1e-14));
  w.lambda = 1;
  auto sup = simgcd_loss(t.f, t.fp, t.head, t.prototypes, t.batch, w).loss;
  CHECK(sup.total.item() == doctest::Approx(sup.rep_sup.item() + sup.cls_sup.item()).epsilon(1e-14));
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.tau_s = 0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = {};
  w.lambda = 1.5;
  CHECK_THROWS_AS(w.validate(), ValidationError);
}
