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

#include "dqloop/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace dqloop {

ConfusionMatrix confusion(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                          double threshold) {
  if (scores.size() != labels.size()) throw InvalidArgument("confusion: size mismatch");
  ConfusionMatrix cm;
  cm.threshold = threshold;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      pred ? ++cm.tp : ++cm.fn;
    } else {
      pred ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

std::string Metric::render(int decimals) const {
  if (!defined) return format_fixed(0.0, decimals) + "*";
  return format_fixed(value, decimals);
}

nlohmann::json Metric::to_json() const {
  return {{"value", defined ? nlohmann::json(value) : nlohmann::json(nullptr)}, {"defined", defined}};
}

Metric precision(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fp == 0) return {};
  return {static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp), true};
}

Metric recall(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fn == 0) return {};
  return {static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn), true};
}

double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (auto l : labels) pos += l != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("auc: both classes required");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

Metric auc_metric(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  const auto pos = std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; });
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) return {};
  return {auc(scores, labels), true};
}

TypeReport evaluate_pool(ExceptionType type, const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels, double threshold) {
  TypeReport r;
  r.type = type;
  r.cm = confusion(scores, labels, threshold);
  r.precision = precision(r.cm);
  r.recall = recall(r.cm);
  r.auc = auc_metric(scores, labels);
  r.pool = scores.size();
  r.positives = r.cm.tp + r.cm.fn;
  return r;
}

const TypeReport& EvaluationReport::find(ExceptionType t, bool gold_pool) const {
  const auto& rows = gold_pool ? gold : full;
  for (const auto& r : rows) {
    if (r.type == t) return r;
  }
  throw InvalidArgument("no report for " + std::string(to_string(t)));
}

namespace {
nlohmann::json rows_json(const std::vector<TypeReport>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"exception_type", std::string(to_string(r.type))},
                   {"precision", r.precision.to_json()},
                   {"recall", r.recall.to_json()},
                   {"auc", r.auc.to_json()},
                   {"pool", r.pool},
                   {"positives", r.positives},
                   {"confusion", {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"fn", r.cm.fn}, {"tn", r.cm.tn}}}});
  }
  return out;
}
}  // namespace

nlohmann::json EvaluationReport::to_json() const {
  return {{"schema_version", kSchemaVersion},
          {"threshold", threshold},
          {"full", rows_json(full)},
          {"gold", rows_json(gold)}};
}

EvaluationReport evaluate_models(const std::array<const GbmModel*, kNumExceptionTypes>& models,
                                 const FeatureMatrix& fm, double threshold) {
  EvaluationReport report;
  report.threshold = threshold;
  const auto test = fm.rows_with(SplitTag::test);
  for (const auto type : alphabetical_types()) {
    const std::size_t t = index_of(type);
    if (models[t] == nullptr) throw InvalidArgument("untrained type " + std::string(to_string(type)));
    const DenseMatrix x = fm.view(type, test);
    models[t]->check_schema(fm.schema(type).hash(), x.cols());
    const auto scores = models[t]->predict_proba(x);
    std::vector<std::uint8_t> labels;
    std::vector<double> gold_scores;
    std::vector<std::uint8_t> gold_labels;
    for (std::size_t k = 0; k < test.size(); ++k) {
      labels.push_back(fm.labels[t][test[k]]);
      if (fm.gold(type, test[k])) {
        gold_scores.push_back(scores[k]);
        gold_labels.push_back(fm.labels[t][test[k]]);
      }
    }
    report.full.push_back(evaluate_pool(type, scores, labels, threshold));
    report.gold.push_back(evaluate_pool(type, gold_scores, gold_labels, threshold));
  }
  return report;
}

std::string detection_csv(const std::vector<TypeReport>& rows) {
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return to_string(a.type) < to_string(b.type); });
  std::string out = "exception_type,precision,recall,auc,pool\n";
  for (const auto& r : sorted) {
    out += std::string(to_string(r.type)) + ',' + r.precision.render() + ',' + r.recall.render() + ',' +
           r.auc.render() + ',' + std::to_string(r.pool) + '\n';
  }
  return out;
}

void write_detection_csv(const std::vector<TypeReport>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out << detection_csv(rows);
}

}  // namespace dqloop
