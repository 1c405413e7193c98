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

#pragma once

// Review-queue ordering by probability x economic weight, and NDCG@K.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "json.hpp"

namespace dqloop {

// probability * amount; throws InvalidArgument outside p in [0,1], amount >= 0.
double rank_score(double probability, double amount);

struct Prediction {
  std::string instrument_id;
  Month ref_month{};
  ExceptionType type = ExceptionType::AmountOutstanding;
  double probability = 0.0;
  double amount = 0.0;  // amount outstanding, or market cap when zero
};

struct RankedException {
  std::string instrument_id;
  Month ref_month{};
  ExceptionType type = ExceptionType::AmountOutstanding;
  double probability = 0.0;
  double amount_outstanding = 0.0;
  double rank_score = 0.0;
  std::size_t position = 0;  // 1-based

  nlohmann::json to_json() const;
};

// Score descending, then probability descending, then instrument id, then month.
std::vector<RankedException> rank_queue(const std::vector<Prediction>& predictions);

// sum_{i<=min(p,n)} rel_i / log2(i+1). Throws on p < 1.
double dcg(const std::vector<int>& relevances, std::size_t p);
// DCG / ideal DCG; 0 when the pool has no positives.
double ndcg(const std::vector<int>& relevances, std::size_t p);

inline const std::vector<std::size_t> kDefaultCutoffs{10, 50, 100, 1000};

struct NdcgRow {
  ExceptionType type = ExceptionType::AmountOutstanding;
  std::size_t k = 0;
  double ndcg = 0.0;
  std::size_t pool = 0;
  std::size_t positives = 0;
};

// `relevant` answers whether a queue entry is a true error of its type.
// With flagged_only, the pool is restricted to probability >= threshold.
std::vector<NdcgRow> evaluate_ranking(
    const std::vector<std::vector<RankedException>>& queues,
    const std::function<bool(const RankedException&)>& relevant,
    const std::vector<std::size_t>& cutoffs = kDefaultCutoffs, bool flagged_only = false,
    double threshold = 0.5);

// Columns: exception_type,K,ndcg (type alphabetical, K ascending).
std::string ndcg_csv(std::vector<NdcgRow> rows);
nlohmann::json ndcg_json(const std::vector<NdcgRow>& rows);

}  // namespace dqloop
