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

// Tree-Shapley attributions, weighted counterfactual search, nearest
// exemplars and simple-model copies of a boosted ensemble.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/features.hpp"
#include "dqloop/learners.hpp"
#include "dqloop/metrics.hpp"
#include "json.hpp"

namespace dqloop {

// ---------------------------------------------------------------------------
// Shapley values
// ---------------------------------------------------------------------------

struct Attribution {
  double base = 0.0;  // expected margin (log-odds)
  std::vector<double> contributions;
  double margin = 0.0;
  std::string row_id;
  std::string model_id;

  // |base + sum(contributions) - margin|
  double additivity_error() const;
  nlohmann::json to_json(const std::vector<std::string>& feature_names) const;
};

// Cover-weighted mean of the tree's leaf values.
double tree_expected_value(const Tree& tree);
// base_score + sum of tree expectations.
double expected_value(const GbmModel& model);

// Path-dependent Shapley values of one tree; adds into `phi`.
// Throws InvalidArgument when node covers are missing.
void tree_shap(const Tree& tree, std::span<const double> row, std::span<double> phi);

Attribution shap_local(const GbmModel& model, std::span<const double> row);
// Per-feature mean |phi| over the rows (unsorted, schema order).
std::vector<double> shap_global(const GbmModel& model, const DenseMatrix& rows);
// Feature indices ordered by descending global importance (ties by index).
std::vector<std::size_t> importance_order(const std::vector<double>& global);

// ---------------------------------------------------------------------------
// Counterfactuals
// ---------------------------------------------------------------------------

// A user-facing variable: one numeric feature, or a group of features that
// encode one categorical/boolean value together.
struct CfVariable {
  std::string name;
  std::string source;
  bool numeric = true;
  std::vector<std::size_t> features;
  double weight = 1.0;
  bool immutable = false;
  double scale = 1.0;  // numeric distance unit (training MAD)
  // Candidate values: numeric -> one value each; categorical -> one value per
  // entry of `features`, with a display label.
  std::vector<std::vector<double>> candidates;
  std::vector<std::string> labels;
};

struct MutabilityPolicy {
  std::vector<CfVariable> variables;
  std::size_t n_features = 0;

  void validate() const;
  // Index of the variable containing feature j.
  std::optional<std::size_t> variable_of(std::size_t feature) const;
  CfVariable* find(std::string_view name);
};

struct PolicyOptions {
  std::set<std::string> immutable_sources{"country", "ref_month"};
  std::map<std::string, double> weights;  // by variable name or source
};

// Numeric variables get training deciles and MAD scales; one-hot groups and
// encoded columns of one source form a categorical variable whose candidates
// are the observed categories; boolean flags are two-valued variables.
MutabilityPolicy make_policy(const FeatureMatrix& fm, ExceptionType type,
                             const PolicyOptions& options = {});

struct CfChange {
  std::string variable;
  std::string original;
  std::string proposed;
};

struct Counterfactual {
  std::vector<CfChange> changes;
  std::vector<double> row;  // the modified row
  int original_class = 0;
  int flipped_class = 0;
  double original_probability = 0.0;
  double probability = 0.0;
  double cost = 0.0;

  nlohmann::json to_json() const;
};

struct CounterfactualResult {
  std::vector<Counterfactual> items;
  bool budget_exhausted = false;
  bool exhaustive = false;
  std::size_t evaluations = 0;

  nlohmann::json to_json() const;
};

struct CounterfactualOptions {
  double threshold = 0.5;
  std::size_t n = 3;
  std::size_t restarts = 10;
  std::size_t max_changes = 4;
  std::size_t exhaustive_limit = 4096;
  std::size_t max_evaluations = 50000;
  std::uint64_t seed = 1;
};

using ProbaFn = std::function<double(std::span<const double>)>;

CounterfactualResult find_counterfactuals(const ProbaFn& model, std::span<const double> row,
                                          const MutabilityPolicy& policy,
                                          const CounterfactualOptions& options = {});
CounterfactualResult find_counterfactuals(const GbmModel& model, std::span<const double> row,
                                          const MutabilityPolicy& policy,
                                          const CounterfactualOptions& options = {});

// Cost of moving `row` to `changed` under the policy.
double counterfactual_cost(const MutabilityPolicy& policy, std::span<const double> row,
                           std::span<const double> changed);

// ---------------------------------------------------------------------------
// Exemplars
// ---------------------------------------------------------------------------

struct Exemplar {
  std::size_t row = 0;  // index into the candidate set
  double distance = 0.0;
  int label = 0;
};

// Gower distance: numeric |a-b|/range, categorical 0/1 mismatch, averaged.
class GowerMetric {
 public:
  GowerMetric(const DenseMatrix& reference, std::vector<bool> categorical);
  double distance(std::span<const double> a, std::span<const double> b) const;

 private:
  std::vector<double> range_;
  std::vector<bool> categorical_;
};

// k nearest rows by Gower distance, ties broken by row index; k larger than
// the candidate set returns everything.
std::vector<Exemplar> nearest_exemplars(std::span<const double> query, const DenseMatrix& rows,
                                        const std::vector<std::uint8_t>& labels,
                                        const GowerMetric& metric, std::size_t k);
std::vector<bool> categorical_mask(const FeatureSchema& schema);

// ---------------------------------------------------------------------------
// Model copies
// ---------------------------------------------------------------------------

struct CopyReport {
  SimpleModel copy;
  double fidelity = 0.0;  // agreement with the original on the held-out pool
  Metric original_auc, original_precision, original_recall;
  Metric copy_auc, copy_precision, copy_recall;
};

// Trains `kind` on the original's hard labels (threshold 0.5) over `pool`.
// Throws InvalidArgument for pools under 100 rows.
CopyReport copy_model(const GbmModel& original, const DenseMatrix& pool, SimpleKind kind,
                      const DenseMatrix& holdout, const DenseMatrix& test,
                      const std::vector<std::uint8_t>& test_labels, const SimpleParams& params = {},
                      double threshold = 0.5);

struct CopyComparison {
  ExceptionType type = ExceptionType::AmountOutstanding;
  CopyReport tree;
  CopyReport glm;
};

// Rows AUC/Precision/Recall/Fidelity; columns original, tree, glm.
std::string copy_csv(const std::vector<CopyComparison>& rows);
nlohmann::json copy_json(const std::vector<CopyComparison>& rows);

}  // namespace dqloop
