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

// Confusion-matrix metrics, rank AUC and the full-vs-gold detection report.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/features.hpp"
#include "dqloop/learners.hpp"
#include "json.hpp"

namespace dqloop {

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double threshold = 0.5;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
};

// Positive prediction iff score >= threshold.
ConfusionMatrix confusion(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                          double threshold);

// A metric that may be undefined (zero denominator, single-class pool).
struct Metric {
  double value = 0.0;
  bool defined = false;

  // "0.500", or "0.000*" when undefined.
  std::string render(int decimals = 3) const;
  nlohmann::json to_json() const;
};

Metric precision(const ConfusionMatrix& cm);
Metric recall(const ConfusionMatrix& cm);

// Mann-Whitney AUC with midranks. Throws InvalidArgument on single-class labels.
double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);
Metric auc_metric(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct TypeReport {
  ExceptionType type = ExceptionType::AmountOutstanding;
  Metric precision, recall, auc;
  ConfusionMatrix cm;
  std::size_t pool = 0;
  std::size_t positives = 0;
};

struct EvaluationReport {
  double threshold = 0.5;
  std::vector<TypeReport> full;  // alphabetical type order
  std::vector<TypeReport> gold;

  const TypeReport& find(ExceptionType t, bool gold_pool = false) const;
  nlohmann::json to_json() const;
};

TypeReport evaluate_pool(ExceptionType type, const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels, double threshold);

// Test rows only; gold subset = test rows whose label came from iDQM audits.
EvaluationReport evaluate_models(const std::array<const GbmModel*, kNumExceptionTypes>& models,
                                 const FeatureMatrix& fm, double threshold);

// Columns: exception_type,precision,recall,auc,pool.
void write_detection_csv(const std::vector<TypeReport>& rows, const std::filesystem::path& path);
std::string detection_csv(const std::vector<TypeReport>& rows);

}  // namespace dqloop
