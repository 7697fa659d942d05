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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gcdkit/evalmetrics.hpp"
#include "oracles.hpp"

using namespace gcdkit;
using gcdkit::testing::brute_force_match;
using gcdkit::testing::random_counts;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "gcdkit_test_evalmetrics";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("confusion matrix is square and padded") {
  std::vector<int> preds{0, 0, 2}, truths{1, 1, 0};
  auto cm = ConfusionMatrix::from(preds, truths, 4);
  CHECK(cm.size() == 4);
  CHECK(cm.counts(0, 1) == 2);
  CHECK(cm.counts(2, 0) == 1);
  CHECK(cm.total() == 3);
  CHECK(ConfusionMatrix::from(preds, truths).size() == 3);
  CHECK_THROWS_AS(ConfusionMatrix::from(preds, std::vector<int>{0}), ValidationError);
}

TEST_CASE("diagonal and anti-diagonal matrices") {
  ConfusionMatrix diag{CountMatrix::Identity(4, 4) * 7};
  auto a = optimal_permutation(diag);
  CHECK(a.mapping == std::vector<int>{0, 1, 2, 3});
  CHECK(a.matched == 28);

  ConfusionMatrix anti{CountMatrix::Zero(3, 3)};
  for (int i = 0; i < 3; ++i) anti.counts(i, 2 - i) = 5;
  CHECK(optimal_permutation(anti).mapping == std::vector<int>{2, 1, 0});
}

TEST_CASE("random 5x5 matrices match exhaustive search over 120 permutations") {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix cm{random_counts(5, rng)};
    auto got = optimal_permutation(cm);
    auto want = brute_force_match(cm.counts);
    CHECK(got.matched == want.matched);
    CHECK(got.mapping == want.mapping);
  }
}

TEST_CASE("ties resolve to the lexicographically smallest optimum") {
  ConfusionMatrix flat{CountMatrix::Constant(4, 4, 3)};
  CHECK(optimal_permutation(flat).mapping == std::vector<int>{0, 1, 2, 3});
  // Low-range counts force many ties.
  Rng rng = make_rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix cm{random_counts(6, rng, 1)};
    CHECK(optimal_permutation(cm).mapping == brute_force_match(cm.counts).mapping);
  }
}

TEST_CASE("hungarian_min_cost finds a minimum") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    CountMatrix c = random_counts(6, rng, 50);
    auto assignment = hungarian_min_cost(c);
    std::int64_t cost = 0;
    for (Index i = 0; i < 6; ++i) cost += c(i, assignment[static_cast<std::size_t>(i)]);
    CHECK(-cost == brute_force_match(-c).matched);
  }
  CHECK_THROWS_AS(hungarian_min_cost(CountMatrix::Zero(2, 3)), ValidationError);
}

TEST_CASE("gcd_accuracy examples") {
  std::set<int> old{0, 1};
  std::vector<int> truths{0, 1, 2, 2, 3, 3};
  auto perfect = gcd_accuracy(truths, truths, old, 4);
  CHECK(*perfect.acc_all == 1.0);
  CHECK(*perfect.acc_old == 1.0);
  CHECK(*perfect.acc_new == 1.0);

  std::vector<int> shifted;
  for (int t : truths) shifted.push_back((t + 1) % 4);
  auto relabeled = gcd_accuracy(shifted, truths, old, 4);
  CHECK(*relabeled.acc_all == 1.0);
  CHECK(*relabeled.acc_new == 1.0);

  // One new-class sample lands in the other new cluster.
  std::vector<int> one_error{0, 1, 2, 2, 3, 2};
  auto r = gcd_accuracy(one_error, truths, old, 4);
  auto brute = brute_force_match(ConfusionMatrix::from(one_error, truths, 4).counts);
  CHECK(brute.matched == 5);
  CHECK(r.assignment.mapping == brute.mapping);
  CHECK(*r.acc_all == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(*r.acc_old == 1.0);
  CHECK(*r.acc_new == 0.75);
  CHECK(r.n_old == 2);
  CHECK(r.n_new == 4);
}

TEST_CASE("matching is global, not per subset") {
  // Cluster 0 holds two new and one old sample. A per-subset matching would
  // score the old sample as correct too.
  std::set<int> old{0};
  std::vector<int> truths{0, 1, 1}, preds{0, 0, 0};
  auto r = gcd_accuracy(preds, truths, old, 2);
  CHECK(*r.acc_all == doctest::Approx(2.0 / 3.0));
  CHECK(*r.acc_old == 0.0);
  CHECK(*r.acc_new == 1.0);
}

TEST_CASE("accuracy properties over random predictions") {
  Rng rng = make_rng(8);
  std::uniform_int_distribution<int> cls(0, 5);
  std::set<int> old{0, 1, 2};
  int unique = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> preds(40), truths(40);
    for (auto& p : preds) p = cls(rng);
    for (auto& t : truths) t = cls(rng);
    auto r = gcd_accuracy(preds, truths, old, 6);
    REQUIRE(r.acc_old.has_value());
    REQUIRE(r.acc_new.has_value());
    const double mix = (static_cast<double>(r.n_old) * *r.acc_old + static_cast<double>(r.n_new) * *r.acc_new) /
                       static_cast<double>(r.n_all);
    CHECK(*r.acc_all == doctest::Approx(mix).epsilon(1e-14));

    std::vector<int> sigma{3, 5, 0, 1, 4, 2}, relabeled;
    for (int p : preds) relabeled.push_back(sigma[static_cast<std::size_t>(p)]);
    auto s = gcd_accuracy(relabeled, truths, old, 6);
    CHECK(*s.acc_all == *r.acc_all);
    // With several optimal matchings the tie-break follows cluster ids, so
    // the old/new split is only label-invariant when the optimum is unique.
    if (brute_force_match(r.confusion.counts).optima == 1) {
      ++unique;
      CHECK(*s.acc_old == *r.acc_old);
      CHECK(*s.acc_new == *r.acc_new);
    }
  }
  CHECK(unique > 10);
}

TEST_CASE("empty subsets are absent") {
  std::set<int> old{0, 1};
  std::vector<int> truths{0, 1, 0};
  auto r = gcd_accuracy(truths, truths, old, 4);
  CHECK(r.acc_old.has_value());
  CHECK_FALSE(r.acc_new.has_value());
  auto path = scratch("metrics.json");
  write_metrics_json(r, path);
  auto j = nlohmann::json::parse(slurp(path));
  CHECK(j["acc_new"].is_null());
  CHECK(j["acc_old"].get<double>() == 1.0);
  CHECK(j["n_old"].get<int>() == 3);
  CHECK(j["n_new"].get<int>() == 0);
}

TEST_CASE("confusion csv layout") {
  std::vector<int> preds{0, 1, 1}, truths{0, 1, 0};
  auto path = scratch("confusion.csv");
  write_confusion_csv(ConfusionMatrix::from(preds, truths, 2), path);
  CHECK(slurp(path) == "predicted,true_0,true_1\n0,1,0\n1,1,1\n");
}

TEST_CASE("route report rows") {
  std::set<int> old{0, 1};
  std::vector<BlockRoutes> routes{{4, Matrix::Constant(3, 4, 0.25)}, {5, Matrix::Constant(3, 4, 0.25)}};
  std::vector<int> pseudo{0, 3, 1};
  std::ostringstream out;
  write_route_report(out, routes, pseudo, old);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "block,group,expert_id,mean_weight");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::stod(line.substr(line.rfind(',') + 1)) == doctest::Approx(0.25));
  }
  // P * T * 3 groups.
  CHECK(rows == 2 * 4 * 3);

  std::ostringstream empty;
  write_route_report(empty, routes, std::vector<int>{0, 1, 0}, old);
  CHECK(empty.str().find("4,new,0,nan") != std::string::npos);
}
