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
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dqloop/explain.hpp"
#include "dqloop/monitor.hpp"

using namespace dqloop;

namespace {

void noisy(std::size_t n, std::size_t p, std::uint64_t seed, DenseMatrix& x, std::vector<std::uint8_t>& y,
           double shift0 = 0.0, double intercept = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  x = DenseMatrix(n, p);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(i, j) = g(rng);
    x(i, 0) += shift0;
    y[i] = u(rng) < logistic(intercept + 1.5 * x(i, 0) - x(i, 1) + 0.5 * x(i, 2));
  }
}

TrainParams params(int rounds, int depth) {
  TrainParams p;
  p.n_rounds = rounds;
  p.max_depth = depth;
  p.min_child_cover = 1.0;
  return p;
}

std::vector<Month> months(std::size_t n) {
  std::vector<Month> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(add_months(parse_month("2021-01"), static_cast<int>(i)));
  return out;
}

}  // namespace

TEST_CASE("bootstrap resamples") {
  const auto a = bootstrap_indices(500, 1);
  CHECK(a.size() == 500);
  CHECK(bootstrap_indices(500, 1) == a);
  CHECK(std::all_of(a.begin(), a.end(), [](std::size_t i) { return i < 500; }));
  // Multiset of each resample differs from the original set.
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto idx = bootstrap_indices(100, seed);
    std::sort(idx.begin(), idx.end());
    std::vector<std::size_t> identity(100);
    std::iota(identity.begin(), identity.end(), 0);
    CHECK(sha256_hex(std::string(reinterpret_cast<const char*>(idx.data()), idx.size() * sizeof(std::size_t))) !=
          sha256_hex(std::string(reinterpret_cast<const char*>(identity.data()), identity.size() * sizeof(std::size_t))));
  }
  CHECK_THROWS_AS(bootstrap_indices(0, 1), InvalidArgument);
}

TEST_CASE("ensemble determinism and errors") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(300, 4, 1, x, y);
  const auto e1 = fit_bootstrap_ensemble(x, y, 2, params(10, 3), "h", 42);
  const auto e2 = fit_bootstrap_ensemble(x, y, 2, params(10, 3), "h", 42);
  REQUIRE(e1.size() == 2);
  for (std::size_t m = 0; m < 2; ++m) CHECK(serialize(e1[m]) == serialize(e2[m]));
  CHECK(serialize(e1[0]) != serialize(e1[1]));
  CHECK_THROWS_AS(fit_bootstrap_ensemble(x, y, 1, params(10, 3), "h", 42), InvalidArgument);

  // A single positive row makes most resamples single-class; eventually fails.
  std::vector<std::uint8_t> rare(3, 0);
  rare[0] = 1;
  DenseMatrix tiny = x.select_rows(std::vector<std::size_t>{0, 1, 2});
  CHECK_NOTHROW(fit_bootstrap_ensemble(tiny, rare, 3, params(2, 1), "h", 7));
  std::vector<std::uint8_t> none(3, 0);
  CHECK_THROWS_AS(fit_bootstrap_ensemble(tiny, none, 3, params(2, 1), "h", 7), InvalidArgument);
}

TEST_CASE("uncertainty arithmetic") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(300, 4, 2, x, y);
  const auto model = train_gbm(x, y, params(10, 3), "h");
  std::vector<GbmModel> same(4, model);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto u = uncertainty(same, x.row(i));
    CHECK(u.std == 0.0);
    CHECK(u.mean == model.predict_proba(x.row(i)));
    CHECK(u.b == 4);
  }

  // Two constant members at 0.2 and 0.8.
  auto constant = [](double p) {
    GbmModel m;
    m.n_features = 4;
    m.base_score = std::log(p / (1 - p));
    return m;
  };
  const std::vector<GbmModel> pair{constant(0.2), constant(0.8)};
  const auto u = uncertainty(pair, x.row(0));
  CHECK(u.mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(u.std == doctest::Approx(0.3).epsilon(1e-12));
  const std::vector<GbmModel> swapped{constant(0.8), constant(0.2)};
  CHECK(uncertainty(swapped, x.row(0)).std == doctest::Approx(u.std).epsilon(1e-15));
  CHECK_THROWS_AS(uncertainty(pair, std::vector<double>{1.0}), SchemaMismatch);
  CHECK_THROWS_AS(uncertainty(std::vector<GbmModel>{}, x.row(0)), InvalidArgument);
  CHECK(mean_std({{0.5, 0.1, 2}, {0.5, 0.3, 2}}) == doctest::Approx(0.2));
}

TEST_CASE("shifted batches carry more ensemble disagreement") {
  DenseMatrix x, pool, in, shifted;
  std::vector<std::uint8_t> y, yp, yi, ys;
  // Rare positives, as in the exception data.
  noisy(3000, 5, 3, x, y, 0.0, -2.0);
  noisy(2000, 5, 6, pool, yp, 0.0, -2.0);
  noisy(200, 5, 4, in, yi, 0.0, -2.0);
  noisy(200, 5, 5, shifted, ys, 5.0, -2.0);
  const auto ensemble = fit_bootstrap_ensemble(x, y, 10, params(50, 3), "h", 9);
  // Baseline from held-out in-distribution rows.
  const auto held = uncertainty(ensemble, pool);
  const double base = uncertainty_baseline(held, 200, 0.99, 300, 1);
  // In-distribution batches alarm at about the nominal 1% rate.
  std::size_t alarms = 0;
  for (std::uint64_t b = 0; b < 40; ++b) {
    noisy(200, 5, 1000 + b, in, yi, 0.0, -2.0);
    alarms += mean_std(uncertainty(ensemble, in)) > base;
  }
  CHECK(alarms <= 4);
  CHECK(mean_std(uncertainty(ensemble, shifted)) > base);
  CHECK(uncertainty_baseline(held, 200, 0.99, 300, 1) == base);
}

TEST_CASE("drift flags") {
  const auto ms = months(12);
  DriftOptions opt;  // W=6, k=3

  SUBCASE("constant zero is never flagged") {
    const auto r = drift_from_series({"z"}, ms, {std::vector<double>(12, 0.0)}, opt);
    CHECK(r.flag_count() == 0);
    std::vector<double> wiggle(12, 0.4);
    wiggle[9] += 1e-12;
    CHECK(drift_from_series({"w"}, ms, {wiggle}, opt).flag_count() == 0);
  }
  SUBCASE("a jump is flagged at its month only when the window is full") {
    std::vector<double> s{0.30, 0.31, 0.29, 0.30, 0.32, 0.30, 0.29, 0.95, 0.31, 0.30, 0.30, 0.31};
    const auto r = drift_from_series({"f"}, ms, {s}, opt);
    CHECK(r.flagged(0, 7));
    for (std::size_t t = 0; t < 6; ++t) CHECK_FALSE(r.flagged(0, t));
    const auto alarms = r.alarms_json();
    REQUIRE(alarms.size() >= 1);
    CHECK(alarms[0]["month"] == "2021-08");
    CHECK(alarms[0]["feature"] == "f");
  }
  SUBCASE("flags are causal") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(1.0, 0.3);
    std::vector<double> s(12);
    for (auto& v : s) v = g(rng);
    const auto r = drift_from_series({"f"}, ms, {s}, opt);
    for (std::size_t t = opt.window; t < 12; ++t) {
      auto future = s;
      for (std::size_t u = t + 1; u < 12; ++u) future[u] = 100 * g(rng);
      const auto r2 = drift_from_series({"f"}, ms, {future}, opt);
      CHECK(r2.flagged(0, t) == r.flagged(0, t));
      CHECK(r2.trailing_mean[0][t] == r.trailing_mean[0][t]);
    }
  }
  SUBCASE("too few months") {
    CHECK_THROWS_AS(drift_from_series({"f"}, months(6), {std::vector<double>(6, 1.0)}, opt), InvalidArgument);
  }
}

TEST_CASE("stationary streams rarely alarm") {
  const auto ms = months(12);
  std::size_t quiet = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> series;
    std::vector<std::string> names;
    for (int f = 0; f < 10; ++f) {
      const double level = 0.05 + 0.1 * f;
      std::normal_distribution<double> g(level, 0.05 * level);
      std::vector<double> s(12);
      for (auto& v : s) v = g(rng);
      series.push_back(s);
      names.push_back("f" + std::to_string(f));
    }
    quiet += drift_from_series(names, ms, series).flag_count() == 0;
  }
  CHECK(quiet >= 190);
}

TEST_CASE("shap drift on a shifted month") {
  DenseMatrix x;
  std::vector<std::uint8_t> y;
  noisy(2000, 4, 11, x, y);
  const auto model = train_gbm(x, y, params(40, 3), "h");
  std::vector<DenseMatrix> batches;
  for (int m = 0; m < 12; ++m) {
    DenseMatrix b;
    std::vector<std::uint8_t> yb;
    noisy(500, 4, 100 + m, b, yb, m == 7 ? 5.0 : 0.0);
    batches.push_back(b);
  }
  const auto r = shap_drift(model, batches, months(12), {"a", "b", "c", "d"});
  CHECK(r.flagged(0, 7));
  for (std::size_t t = 0; t < 12; ++t)
    if (t != 7) CHECK_FALSE(r.flagged(0, t));
  const auto j = r.to_json();
  CHECK(j.contains("features"));
  batches[3] = DenseMatrix(0, 4);
  CHECK_THROWS_AS(shap_drift(model, batches, months(12), {"a", "b", "c", "d"}), InvalidArgument);
}
