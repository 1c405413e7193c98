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
#include <random>

#include "doctest.h"
#include "dqloop/rank.hpp"
#include "oracles.hpp"

using namespace dqloop;
using dqloop::oracle::oracle_ndcg;

namespace {

Prediction pred(const std::string& id, double p, double amount, const std::string& month = "2020-06") {
  Prediction x;
  x.instrument_id = id;
  x.ref_month = parse_month(month);
  x.probability = p;
  x.amount = amount;
  return x;
}

}  // namespace

TEST_CASE("rank_score examples") {
  CHECK(rank_score(0.8, 1000000) == doctest::Approx(800000));
  CHECK(rank_score(0.0, 123456) == 0.0);
  CHECK(rank_score(1.0, 98765.5) == 98765.5);
  CHECK_THROWS_AS(rank_score(1.1, 1), InvalidArgument);
  CHECK_THROWS_AS(rank_score(0.5, -1), InvalidArgument);
}

TEST_CASE("rank_queue ordering") {
  auto q = rank_queue({pred("A", 0.9, 100), pred("B", 0.1, 10000)});
  REQUIRE(q.size() == 2);
  CHECK(q[0].instrument_id == "B");
  CHECK(q[0].rank_score == doctest::Approx(1000));
  CHECK(q[1].rank_score == doctest::Approx(90));
  CHECK(q[0].position == 1);
  CHECK(q[1].position == 2);

  // Equal scores and probabilities fall back to id order.
  q = rank_queue({pred("C", 0.5, 10), pred("A", 0.5, 10), pred("B", 0.5, 10)});
  CHECK(q[0].instrument_id == "A");
  CHECK(q[1].instrument_id == "B");
  CHECK(q[2].instrument_id == "C");
  // Equal scores: higher probability first.
  q = rank_queue({pred("A", 0.25, 40), pred("B", 0.5, 20)});
  CHECK(q[0].instrument_id == "B");
}

TEST_CASE("rank_queue ignores input order and amount scale") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Prediction> preds;
  for (int i = 0; i < 300; ++i) preds.push_back(pred("I" + std::to_string(i % 150), std::round(u(rng) * 10) / 10,
                                                     std::round(u(rng) * 5) * 100,
                                                     i < 150 ? "2020-06" : "2020-07"));
  const auto base = rank_queue(preds);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(preds.begin(), preds.end(), rng);
    const auto again = rank_queue(preds);
    REQUIRE(again.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(again[i].instrument_id == base[i].instrument_id);
      CHECK(again[i].ref_month == base[i].ref_month);
    }
  }
  auto scaled = preds;
  for (auto& p : scaled) p.amount *= 8;  // exact power of two keeps ties
  const auto sq = rank_queue(scaled);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(sq[i].instrument_id == base[i].instrument_id);
  for (std::size_t i = 1; i < base.size(); ++i) CHECK(base[i - 1].rank_score >= base[i].rank_score);
}

TEST_CASE("dcg and ndcg examples") {
  CHECK(dcg({1, 0, 1}, 3) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(dcg({0, 0, 0}, 3) == 0.0);
  CHECK(dcg({1, 1, 0}, 1) == 1.0);
  CHECK_THROWS_AS(dcg({1}, 0), InvalidArgument);
  CHECK(std::abs(ndcg({1, 0, 1}, 3) - 1.5 / (1 + 1 / std::log2(3.0))) < 1e-12);
  CHECK(ndcg({1, 0, 1}, 3) == doctest::Approx(0.9197).epsilon(1e-4));
  CHECK(ndcg({1, 1, 0, 0}, 4) == 1.0);
  CHECK(ndcg({0, 0, 0}, 2) == 0.0);
}

TEST_CASE("ndcg matches the oracle on random cases") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 300);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = len(rng);
    const double rate = u(rng);
    std::vector<int> rel(n);
    for (auto& r : rel) r = u(rng) < rate;
    const std::size_t p = 1 + len(rng) % (n + 20);
    const double got = ndcg(rel, p);
    worst = std::max(worst, std::abs(got - oracle_ndcg(rel, p)));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0 + 1e-15);
    auto ideal = rel;
    std::sort(ideal.rbegin(), ideal.rend());
    if (std::count(rel.begin(), rel.end(), 1) > 0) CHECK(ndcg(ideal, p) == 1.0);
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("evaluate_ranking on ideal and reversed queues") {
  std::vector<Prediction> preds;
  for (int i = 0; i < 2000; ++i) {
    auto p = pred("I" + std::to_string(10000 + i), 0.9, 2000.0 - i);
    preds.push_back(p);
  }
  const auto queue = rank_queue(preds);
  std::vector<std::vector<RankedException>> queues(1, queue);
  // Positives are the top 20 rows.
  auto top = [](const RankedException& e) { return e.position <= 20; };
  for (const auto& row : evaluate_ranking(queues, top)) CHECK(row.ndcg == 1.0);
  // Positives are the last 20 rows.
  auto bottom = [](const RankedException& e) { return e.position > 1980; };
  const auto rows = evaluate_ranking(queues, bottom);
  REQUIRE(rows.size() == kDefaultCutoffs.size());
  CHECK(rows[0].k == 10);
  CHECK(rows[0].ndcg == 0.0);
  CHECK(rows[0].pool == 2000);
  CHECK(rows[0].positives == 20);
  // No positives at all.
  for (const auto& row : evaluate_ranking(queues, [](const RankedException&) { return false; }))
    CHECK(row.ndcg == 0.0);
}

TEST_CASE("flagged-only mode restricts the pool") {
  std::vector<Prediction> preds{pred("A", 0.9, 1), pred("B", 0.2, 100), pred("C", 0.6, 2)};
  std::vector<std::vector<RankedException>> queues{rank_queue(preds)};
  auto rel = [](const RankedException& e) { return e.instrument_id == "A"; };
  const auto all = evaluate_ranking(queues, rel, {10});
  const auto flagged = evaluate_ranking(queues, rel, {10}, true, 0.5);
  CHECK(all[0].pool == 3);
  CHECK(flagged[0].pool == 2);
  CHECK(flagged[0].ndcg == doctest::Approx(oracle_ndcg({0, 1}, 10)));
  CHECK(all[0].ndcg == doctest::Approx(oracle_ndcg({0, 0, 1}, 10)));
}

TEST_CASE("ndcg csv is type-alphabetical and K-ascending") {
  std::vector<NdcgRow> rows;
  for (auto t : kAllExceptionTypes)
    for (std::size_t k : {100, 10}) rows.push_back(NdcgRow{t, k, 0.5, 10, 1});
  const auto csv = ndcg_csv(rows);
  CHECK(csv.rfind("exception_type,K,ndcg\nAmountOutstanding,10,0.500\nAmountOutstanding,100,0.500\nCouponDate,10", 0) == 0);
}
