/*
 * Copyright 2026 The dqloop Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dqloop/learners.hpp"

using namespace dqloop;

namespace {

// 1-D separable toy set: x in [-3,-1] labelled 0, x in [1,3] labelled 1.
void toy(std::size_t n, std::uint64_t seed, DenseMatrix& x, std::vector<std::uint8_t>& y) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1.0, 3.0);
  x = DenseMatrix(n, 1);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    x(i, 0) = pos ? u(rng) : -u(rng);
    y[i] = pos;
  }
}

// Noisy multi-feature data with an interaction.
void noisy(std::size_t n, std::size_t p, std::uint64_t seed, DenseMatrix& x, std::vector<std::uint8_t>& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  x = DenseMatrix(n, p);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(i, j) = std::round(g(rng) * 4) / 4;
    const double m = 1.5 * x(i, 0) - x(i, 1) + (x(i, 2) > 0.5 && x(i, 3) < 0 ? 2.0 : 0.0) - 0.5;
    y[i] = u(rng) < logistic(m);
  }
}

TrainParams params(int rounds, int depth) {
  TrainParams p;
  p.n_rounds = rounds;
  p.max_depth = depth;
  p.min_child_cover = 1.0;
  return p;
}

}  // namespace

TEST_CASE("stump on the separable toy set") {
  DenseMatrix x, xt;
  std::vector<std::uint8_t> y, yt;
  toy(200, 1, x, y);
  toy(200, 2, xt, yt);
  const auto model = train_gbm(x, y, params(50, 1), "toy");
  CHECK(model.trees.size() == 50);
  for (const auto& t : model.trees) {
    REQUIRE(t.nodes.size() == 3);
    // Every split falls in the gap between the classes.
    CHECK(t.nodes[0].threshold > -1.0);
    CHECK(t.nodes[0].threshold < 1.0);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xt.rows(); ++i) correct += (model.predict_proba(xt.row(i)) >= 0.5) == (yt[i] == 1);
  CHECK(correct == xt.rows());
}

TEST_CASE("single-class training is rejected") {
  DenseMatrix x(10, 1, 1.0);
  std::vector<std::uint8_t> y(10, 1);
  CHECK_THROWS_AS(train_gbm(x, y, params(5, 2), "h"), InvalidArgument);
  TrainParams bad = params(5, 2);
  bad.learning_rate = 0;
  y[0] = 0;
  CHECK_THROWS_AS(train_gbm(x, y, bad, "h"), InvalidArgument);
}

TEST_CASE("training loss never increases and covers are conserved") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    DenseMatrix x;
    std::vector<std::uint8_t> y;
    noisy(600, 6, seed, x, y);
    const auto model = train_gbm(x, y, params(60, 3), "h");
    REQUIRE(model.train_loss.size() == model.trees.size() + 1);
    for (std::size_t i = 1; i < model.train_loss.size(); ++i) CHECK(model.train_loss[i] <= model.train_loss[i - 1]);
    for (const auto& t : model.trees) {
      for (const auto& node : t.nodes) {
        if (node.is_leaf()) continue;
        CHECK(node.left >= 0);
        CHECK(node.right >= 0);
        CHECK(node.cover == doctest::Approx(t.nodes[node.left].cover + t.nodes[node.right].cover).epsilon(1e-12));
      }
      CHECK(t.depth() <= 3);
    }
  }
}

TEST_CASE("ensembles grow by appending trees") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(400, 5, 8, x, y);
  const auto a = train_gbm(x, y, params(10, 3), "h");
  const auto b = train_gbm(x, y, params(25, 3), "h");
  REQUIRE(b.trees.size() == 25);
  for (std::size_t i = 0; i < a.trees.size(); ++i) CHECK(a.trees[i] == b.trees[i]);
}

TEST_CASE("early stopping on validation loss") {
  DenseMatrix x, xv;
  std::vector<std::uint8_t> y, yv;
  noisy(300, 6, 3, x, y);
  noisy(300, 6, 4, xv, yv);
  auto p = params(400, 4);
  p.learning_rate = 0.5;
  p.early_stopping_patience = 5;
  const auto model = train_gbm(x, y, p, "h", &xv, &yv);
  CHECK(model.trees.size() < 400);
  REQUIRE(!model.validation_loss.empty());
  const auto best = std::min_element(model.validation_loss.begin(), model.validation_loss.end());
  CHECK(static_cast<std::size_t>(best - model.validation_loss.begin()) == model.trees.size());
}

TEST_CASE("training is deterministic") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(500, 6, 5, x, y);
  CHECK(serialize(train_gbm(x, y, params(30, 4), "h")) == serialize(train_gbm(x, y, params(30, 4), "h")));
}

TEST_CASE("prediction basics") {
  GbmModel zero;
  zero.n_features = 3;
  const std::vector<double> row{1, 2, 3};
  CHECK(zero.predict_proba(row) == 0.5);

  GbmModel big;
  big.n_features = 1;
  Tree t;
  t.nodes.push_back(TreeNode{-1, 0, -1, -1, 20.0, 1.0});
  big.trees.push_back(t);
  CHECK(big.predict_proba(std::vector<double>{0.0}) > 0.9999);

  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(300, 5, 6, x, y);
  const auto model = train_gbm(x, y, params(20, 3), "hash-a");
  const auto batch = model.predict_proba(x);
  for (std::size_t i = 0; i < x.rows(); ++i) CHECK(batch[i] == model.predict_proba(x.row(i)));
  CHECK_THROWS_AS(model.check_schema("hash-b", 5), SchemaMismatch);
  CHECK_THROWS_AS(model.check_schema("hash-a", 4), SchemaMismatch);
  CHECK_NOTHROW(model.check_schema("hash-a", 5));
}

TEST_CASE("GLM toy sign and objective trace") {
  DenseMatrix x;
  std::vector<double> y;
  for (int i = 0; i < 100; ++i) {
    x.append_row(std::vector<double>{-1.0});
    y.push_back(0);
    x.append_row(std::vector<double>{1.0});
    y.push_back(1);
  }
  SimpleParams p;
  p.l2 = 1.0;
  const auto glm = train_simple(SimpleKind::glm, x, y, p, "h");
  REQUIRE(glm.weights.size() == 1);
  CHECK(glm.weights[0] > 0);
  CHECK(glm.converged);
  for (std::size_t i = 1; i < glm.objective_trace.size(); ++i)
    CHECK(glm.objective_trace[i] <= glm.objective_trace[i - 1] + 1e-15);

  p.max_depth = 1;
  const auto tree = train_simple(SimpleKind::tree, x, y, p, "h");
  REQUIRE(!tree.tree.nodes.empty());
  CHECK(tree.tree.nodes[0].feature == 0);
  CHECK(tree.tree.nodes[0].threshold > -1.0);
  CHECK(tree.tree.nodes[0].threshold < 1.0);
  CHECK(tree.predict_proba(std::vector<double>{-1.0}) == 0.0);
  CHECK(tree.predict_proba(std::vector<double>{1.0}) == 1.0);
}

TEST_CASE("GLM non-convergence is reported") {
  DenseMatrix x;
  std::vector<double> y;
  std::vector<std::uint8_t> yb;
  noisy(200, 4, 2, x, yb);
  y.assign(yb.begin(), yb.end());
  SimpleParams p;
  p.max_iter = 2;
  p.tolerance = 1e-14;
  const auto glm = train_simple(SimpleKind::glm, x, y, p, "h");
  CHECK_FALSE(glm.converged);
  CHECK(glm.iterations == 2);
  CHECK(glm.weights.size() == 4);
}

TEST_CASE("GLM gradient matches central finite differences") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 60, p = 5;
  DenseMatrix x(n, p);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(i, j) = g(rng);
    y[i] = u(rng);  // soft targets
  }
  const double h = 1e-5;
  double worst = 0;
  for (int point = 0; point < 100; ++point) {
    std::vector<double> theta(p + 1);
    for (auto& t : theta) t = 2 * g(rng);
    const double l2 = u(rng) * 3;
    const auto grad = glm_gradient(x, y, theta, l2);
    REQUIRE(grad.size() == p + 1);
    for (std::size_t k = 0; k <= p; ++k) {
      auto up = theta, down = theta;
      up[k] += h;
      down[k] -= h;
      const double fd = (glm_objective(x, y, up, l2) - glm_objective(x, y, down, l2)) / (2 * h);
      const double rel = std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("meta-classifier") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> jitter(-0.005, 0.005);
  auto make = [&](std::size_t n, DenseMatrix& probs, std::vector<std::size_t>& cls) {
    probs = DenseMatrix(n, kNumExceptionTypes);
    cls.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      cls[i] = i % kMetaClasses;
      for (std::size_t t = 0; t < kNumExceptionTypes; ++t)
        probs(i, t) = std::clamp((t == cls[i] ? 0.99 : 0.01) + jitter(rng), 0.0, 1.0);
    }
  };
  DenseMatrix train, held;
  std::vector<std::size_t> yc, yh;
  make(800, train, yc);
  make(800, held, yh);
  const auto meta = train_meta(train, yc);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < held.rows(); ++i) hits += meta.predict_class(held.row(i)) == yh[i];
  CHECK(hits / 800.0 >= 0.95);

  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(kNumExceptionTypes);
    for (auto& v : p) v = u(rng);
    const auto out = meta.predict(p);
    CHECK(std::abs(std::accumulate(out.begin(), out.end(), 0.0) - 1.0) <= 1e-9);
  }

  // Row order does not matter for the full-batch fit.
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> yp;
  for (auto i : order) yp.push_back(yc[i]);
  const auto permuted = train_meta(train.select_rows(order), yp);
  REQUIRE(permuted.weights.size() == meta.weights.size());
  for (std::size_t i = 0; i < meta.weights.size(); ++i) CHECK(std::abs(permuted.weights[i] - meta.weights[i]) <= 1e-8);
  for (std::size_t c = 0; c < kMetaClasses; ++c) CHECK(std::abs(permuted.bias[c] - meta.bias[c]) <= 1e-8);

  std::vector<std::size_t> single(yc.size(), 2);
  CHECK_THROWS_AS(train_meta(train, single), InvalidArgument);
  CHECK(meta_class_name(kNominalClass) == "Nominal");
  CHECK(meta_class_name(0) == "AmountOutstanding");
}

TEST_CASE("serialization round trips and rejects corrupt payloads") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(1000, 6, 21, x, y);
  const auto model = train_gbm(x, y, params(40, 4), "schema-123");
  const auto payload = serialize(model);
  const auto back = deserialize_gbm(payload);
  CHECK(back.schema_hash == "schema-123");
  double worst = 0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    worst = std::max(worst, std::abs(back.predict_proba(x.row(i)) - model.predict_proba(x.row(i))));
  CHECK(worst == 0.0);
  CHECK(serialize(back) == payload);

  CHECK_THROWS_AS(deserialize_gbm(payload.substr(0, payload.size() / 2)), CorruptPayload);
  CHECK_THROWS_AS(deserialize_gbm(""), CorruptPayload);
  auto j = nlohmann::json::parse(payload);
  j["format_version"] = kModelFormatVersion + 1;
  CHECK_THROWS_AS(deserialize_gbm(j.dump()), VersionMismatch);
  CHECK_THROWS_AS(deserialize_simple(payload), CorruptPayload);

  std::vector<double> soft(y.begin(), y.end());
  for (auto kind : {SimpleKind::tree, SimpleKind::glm}) {
    const auto s = train_simple(kind, x, soft, SimpleParams{}, "schema-123");
    const auto s2 = deserialize_simple(serialize(s));
    CHECK(s2.kind == kind);
    CHECK(s2.schema_hash == "schema-123");
    for (std::size_t i = 0; i < 100; ++i) CHECK(s2.predict_proba(x.row(i)) == s.predict_proba(x.row(i)));
  }

  DenseMatrix probs(40, kNumExceptionTypes, 0.1);
  std::vector<std::size_t> cls(40);
  for (std::size_t i = 0; i < 40; ++i) {
    cls[i] = i % 3;
    probs(i, cls[i]) = 0.9;
  }
  const auto meta = train_meta(probs, cls);
  const auto meta2 = deserialize_meta(serialize(meta));
  for (std::size_t i = 0; i < 40; ++i) CHECK(meta2.predict(probs.row(i)) == meta.predict(probs.row(i)));
}
