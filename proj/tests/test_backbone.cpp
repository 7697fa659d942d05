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

#include <cstring>

#include "gcdkit/backbone.hpp"
#include "gcdkit/mea.hpp"
#include "oracles.hpp"

using namespace gcdkit;

namespace {

using Eigen::MatrixXd;

MatrixXd ln_ref(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b) {
  MatrixXd out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + 1e-6)).matrix();
    out.row(r) = out.row(r).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

MatrixXd lin_ref(const MatrixXd& x, const Tensor& w, const Tensor& b) {
  MatrixXd y = x * MatrixXd(w.value()).transpose();
  y.rowwise() += MatrixXd(b.value()).row(0);
  return y;
}

// Textbook pre-norm ViT on one sample, written against plain Eigen.
Vector reference_forward(const MatrixXd& tokens, const BackboneParams& p, const BackboneConfig& c) {
  const auto& e = p.embedding;
  const Index seq = c.token_count + 1, d = c.embed_dim, dh = d / c.num_heads;
  MatrixXd x(seq, d);
  x.row(0) = MatrixXd(e.class_token.value()).row(0);
  x.bottomRows(c.token_count) = lin_ref(tokens, e.patch_weight, e.patch_bias);
  x += MatrixXd(e.position.value());
  for (const auto& b : p.blocks) {
    MatrixXd qkv = lin_ref(ln_ref(x, b.norm1_gain.value(), b.norm1_bias.value()), b.qkv_weight, b.qkv_bias);
    MatrixXd attn(seq, d);
    for (int h = 0; h < c.num_heads; ++h) {
      MatrixXd q = qkv.middleCols(h * dh, dh), k = qkv.middleCols(d + h * dh, dh), v = qkv.middleCols(2 * d + h * dh, dh);
      MatrixXd s = q * k.transpose() / std::sqrt(double(dh));
      for (Index r = 0; r < seq; ++r) {
        s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      attn.middleCols(h * dh, dh) = s * v;
    }
    x += lin_ref(attn, b.proj_weight, b.proj_bias);
    MatrixXd hidden = lin_ref(ln_ref(x, b.ffn.norm_gain.value(), b.ffn.norm_bias.value()), b.ffn.fc1_weight, b.ffn.fc1_bias);
    hidden = hidden.unaryExpr([](double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); });
    x += lin_ref(hidden, b.ffn.fc2_weight, b.ffn.fc2_bias);
  }
  return ln_ref(x.topRows(1), e.norm_gain.value(), e.norm_bias.value());
}

BackboneConfig small() {
  BackboneConfig c;
  c.num_blocks = 3;
  c.embed_dim = 16;
  c.num_heads = 4;
  c.token_count = 5;
  c.input_dim = 6;
  c.mlp_hidden = 24;
  c.seed = 41;
  return c;
}

Tensor random_tokens(const BackboneConfig& c, int batch, std::uint64_t seed, double stddev = 1.0) {
  Rng rng = make_rng(seed);
  return Tensor(gaussian_matrix(batch * c.token_count, c.input_dim, stddev, rng));
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("init is deterministic and frozen") {
  auto c = BackboneConfig::desk();
  auto a = init_backbone(c), b = init_backbone(c);
  CHECK(a.blocks.size() == 6);
  CHECK(a.embedding.patch_weight.rows() == 64);
  auto na = a.named(), nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(bitwise_equal(na[i].tensor.value(), nb[i].tensor.value()));
    CHECK_FALSE(na[i].tensor.requires_grad());
  }
}

TEST_CASE("init rejects embed_dim not divisible by heads") {
  auto c = small();
  c.num_heads = 3;
  CHECK_THROWS_AS(init_backbone(c), ValidationError);
}

TEST_CASE("encode matches a plain reference transformer") {
  auto c = small();
  auto params = init_backbone(c);
  // Scale weights up so attention is not trivially uniform.
  for (auto& nt : params.named()) {
    Tensor t = nt.tensor;
    if (nt.name.find("weight") != std::string::npos || nt.name.find("cls") != std::string::npos ||
        nt.name.find("pos") != std::string::npos) {
      t.mutable_value() *= 20.0;
    }
  }
  const int batch = 3;
  Tensor tokens = random_tokens(c, batch, 3);
  auto trace = encode(tokens, batch, params, c);
  REQUIRE(trace.features.rows() == batch);
  CHECK(trace.features.cols() == c.embed_dim);
  CHECK(trace.pre_ffn.size() == static_cast<std::size_t>(c.num_blocks));
  for (const auto& x : trace.pre_ffn) CHECK(x.rows() == batch * c.sequence_length());
  for (int i = 0; i < batch; ++i) {
    Vector ref = reference_forward(tokens.value().middleRows(i * c.token_count, c.token_count), params, c);
    CHECK((trace.features.value().row(i) - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("smoke: desk-scale encode on random input is finite and bounded") {
  auto c = BackboneConfig::desk();
  auto params = init_backbone(c);
  Tensor tokens = random_tokens(c, 16, 9, 3.0);
  auto h = encode(tokens, 16, params, c).features.value();
  CHECK(h.allFinite());
  // Final layer norm with unit gain and zero bias bounds each row norm by sqrt(d).
  CHECK(h.rowwise().norm().maxCoeff() <= std::sqrt(64.0) + 1e-9);
}

TEST_CASE("adapters with s = 0 leave the forward bitwise unchanged") {
  auto c = small();
  auto params = init_backbone(c);
  MeaConfig m;
  m.experts = 3;
  m.bottleneck = 4;
  m.adapted_blocks = 2;
  m.scale = 0.0;
  auto mea = MultiExpertAdapter::init(m, c.embed_dim, c.num_blocks, 5);
  Rng rng = make_rng(6);
  for (auto& nt : mea.named()) {
    Tensor t = nt.tensor;
    t.mutable_value() = gaussian_matrix(t.rows(), t.cols(), 0.5, rng);
  }
  Tensor tokens = random_tokens(c, 4, 11);
  auto plain = encode(tokens, 4, params, c);
  auto adapted = encode(tokens, 4, params, c, &mea);
  CHECK(bitwise_equal(plain.features.value(), adapted.features.value()));
  CHECK_FALSE(plain.route_weights[2].has_value());
  REQUIRE(adapted.route_weights[2].has_value());
  CHECK_FALSE(adapted.route_weights[0].has_value());
}

TEST_CASE("encode rejects P > L and bad token layouts") {
  auto c = small();
  auto params = init_backbone(c);
  MeaConfig m;
  m.bottleneck = 4;
  m.adapted_blocks = 2;
  auto mea = MultiExpertAdapter::init(m, c.embed_dim, c.num_blocks, 1);
  auto shallow = c;
  shallow.num_blocks = 1;
  auto shallow_params = init_backbone(shallow);
  CHECK_THROWS_AS(encode(random_tokens(c, 2, 1), 2, shallow_params, shallow, &mea), ValidationError);
  CHECK_THROWS_AS(encode(random_tokens(c, 2, 1), 3, params, c), ValidationError);
  m.adapted_blocks = 4;
  CHECK_THROWS_AS(MultiExpertAdapter::init(m, c.embed_dim, c.num_blocks, 1), ValidationError);
}

TEST_CASE("backward leaves frozen backbone grads absent") {
  auto c = small();
  auto params = init_backbone(c);
  MeaConfig m;
  m.bottleneck = 4;
  m.adapted_blocks = 1;
  auto mea = MultiExpertAdapter::init(m, c.embed_dim, c.num_blocks, 2);
  backward(sum(encode(random_tokens(c, 2, 4), 2, params, c, &mea).features));
  for (const auto& nt : params.named()) CHECK_FALSE(nt.tensor.has_grad());
  for (const auto& nt : mea.expert_parameters()) CHECK(nt.tensor.has_grad());
}

TEST_CASE("encode is a pure function of its inputs") {
  auto c = small();
  auto params = init_backbone(c);
  Tensor tokens = random_tokens(c, 2, 8);
  auto a = encode(tokens, 2, params, c).features.value();
  auto b = encode(tokens, 2, params, c).features.value();
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("last-block attention maps are row-stochastic") {
  auto c = small();
  auto params = init_backbone(c);
  std::vector<Matrix> maps;
  encode(random_tokens(c, 2, 8), 2, params, c, nullptr, &maps);
  REQUIRE(maps.size() == 2 * 4);
  for (const auto& a : maps) {
    CHECK(a.rows() == c.sequence_length());
    CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("unfreezing the last block makes only it trainable") {
  auto c = small();
  c.unfreeze_last_block = true;
  auto params = init_backbone(c);
  for (const auto& nt : params.named()) {
    CHECK(nt.tensor.requires_grad() == (nt.name.rfind("backbone.blocks.2.", 0) == 0));
  }
}

TEST_CASE("patchify splits an image row-major") {
  Matrix img(4, 4);
  for (Index i = 0; i < 16; ++i) img.data()[i] = static_cast<double>(i);
  Matrix p = patchify(img, 2);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 4);
  CHECK(p.row(0) == (Vector(4) << 0, 1, 4, 5).finished());
  CHECK(p.row(3) == (Vector(4) << 10, 11, 14, 15).finished());
  CHECK_THROWS_AS(patchify(img, 3), ValidationError);
}
