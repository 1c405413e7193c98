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

#include "dqloop/rank.hpp"

#include <algorithm>
#include <cmath>

namespace dqloop {

double rank_score(double probability, double amount) {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw InvalidArgument("probability must lie in [0,1]");
  }
  if (!(amount >= 0.0)) throw InvalidArgument("amount must be non-negative");
  return probability * amount;
}

nlohmann::json RankedException::to_json() const {
  return {{"instrument_id", instrument_id},
          {"ref_month", format_month(ref_month)},
          {"exception_type", std::string(to_string(type))},
          {"probability", probability},
          {"amount_outstanding", amount_outstanding},
          {"rank_score", rank_score},
          {"position", position}};
}

std::vector<RankedException> rank_queue(const std::vector<Prediction>& predictions) {
  std::vector<RankedException> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    out.push_back({p.instrument_id, p.ref_month, p.type, p.probability, p.amount,
                   rank_score(p.probability, p.amount), 0});
  }
  std::sort(out.begin(), out.end(), [](const RankedException& a, const RankedException& b) {
    if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
    if (a.probability != b.probability) return a.probability > b.probability;
    if (a.instrument_id != b.instrument_id) return a.instrument_id < b.instrument_id;
    if (a.ref_month != b.ref_month) return month_ordinal(a.ref_month) < month_ordinal(b.ref_month);
    return a.type < b.type;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].position = i + 1;
  return out;
}

double dcg(const std::vector<int>& relevances, std::size_t p) {
  if (p < 1) throw InvalidArgument("dcg cutoff must be >= 1");
  double total = 0;
  const std::size_t n = std::min(p, relevances.size());
  for (std::size_t i = 0; i < n; ++i) {
    total += relevances[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  return total;
}

double ndcg(const std::vector<int>& relevances, std::size_t p) {
  auto ideal = relevances;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, p);
  if (idcg <= 0) return 0.0;
  return dcg(relevances, p) / idcg;
}

std::vector<NdcgRow> evaluate_ranking(const std::vector<std::vector<RankedException>>& queues,
                                      const std::function<bool(const RankedException&)>& relevant,
                                      const std::vector<std::size_t>& cutoffs, bool flagged_only,
                                      double threshold) {
  std::vector<NdcgRow> rows;
  for (const auto& queue : queues) {
    if (queue.empty()) continue;
    const ExceptionType type = queue.front().type;
    std::vector<int> rel;
    for (const auto& item : queue) {
      if (item.type != type) throw InvalidArgument("mixed exception types in one queue");
      if (flagged_only && item.probability < threshold) continue;
      rel.push_back(relevant(item) ? 1 : 0);
    }
    const auto positives = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 1));
    for (const auto k : cutoffs) {
      rows.push_back({type, k, rel.empty() ? 0.0 : ndcg(rel, k), rel.size(), positives});
    }
  }
  return rows;
}

std::string ndcg_csv(std::vector<NdcgRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const NdcgRow& a, const NdcgRow& b) {
    if (a.type != b.type) return to_string(a.type) < to_string(b.type);
    return a.k < b.k;
  });
  std::string out = "exception_type,K,ndcg\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.type)) + ',' + std::to_string(r.k) + ',' + format_fixed(r.ndcg, 3) + '\n';
  }
  return out;
}

nlohmann::json ndcg_json(const std::vector<NdcgRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"exception_type", std::string(to_string(r.type))},
                   {"K", r.k},
                   {"ndcg", r.ndcg},
                   {"pool", r.pool},
                   {"positives", r.positives}});
  }
  return out;
}

}  // namespace dqloop
