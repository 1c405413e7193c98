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

// Newton gradient boosting on binary log-loss, simple copy models (CART tree,
// L2 logistic regression) and the multinomial meta-classifier.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "json.hpp"

namespace dqloop {

struct TrainParams {
  int n_rounds = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  double min_child_cover = 5.0;
  double l2_leaf_reg = 1.0;
  int early_stopping_patience = 20;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // rows with x < threshold go left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf contribution (learning rate applied)
  double cover = 0.0;  // training weight reaching the node

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const;
  int depth() const;
  bool operator==(const Tree&) const = default;
};

class GbmModel {
 public:
  std::vector<Tree> trees;
  double base_score = 0.0;  // log-odds
  double learning_rate = 0.1;
  std::string schema_hash;
  std::size_t n_features = 0;
  // Weighted training log-loss after 0..n trees.
  std::vector<double> train_loss;
  std::vector<double> validation_loss;

  double margin(std::span<const double> row) const;
  double predict_proba(std::span<const double> row) const;
  std::vector<double> predict_proba(const DenseMatrix& x) const;
  // Throws SchemaMismatch when the hash or width differs.
  void check_schema(const std::string& hash, std::size_t width) const;
};

// Per-row weights (bootstrap multiplicities) may be empty for all-ones.
// Validation data may be empty to disable early stopping.
GbmModel train_gbm(const DenseMatrix& x, const std::vector<std::uint8_t>& y,
                   const TrainParams& params, const std::string& schema_hash,
                   const DenseMatrix* x_valid = nullptr,
                   const std::vector<std::uint8_t>* y_valid = nullptr,
                   const std::vector<double>* weights = nullptr);

double log_loss(const std::vector<double>& p, const std::vector<std::uint8_t>& y);

// ---------------------------------------------------------------------------
// Simple models
// ---------------------------------------------------------------------------

enum class SimpleKind : std::uint8_t { tree, glm };
std::string_view to_string(SimpleKind k);

struct SimpleParams {
  int max_depth = 4;
  double min_leaf = 5.0;
  double l2 = 1.0;
  int max_iter = 500;
  double tolerance = 1e-6;
};

class SimpleModel {
 public:
  SimpleKind kind = SimpleKind::tree;
  std::string schema_hash;
  std::size_t n_features = 0;
  // Tree: node values are leaf probabilities.
  Tree tree;
  // GLM on raw feature scale.
  std::vector<double> weights;
  double intercept = 0.0;
  bool converged = true;
  int iterations = 0;
  std::vector<double> objective_trace;

  double predict_proba(std::span<const double> row) const;
  std::vector<double> predict_proba(const DenseMatrix& x) const;
};

// Targets in [0,1] (hard or soft).
SimpleModel train_simple(SimpleKind kind, const DenseMatrix& x, const std::vector<double>& targets,
                         const SimpleParams& params, const std::string& schema_hash);

// L2 logistic objective on the given design (no standardization):
//   (1/n) sum_i loss(y_i, b + w.x_i) + l2/(2n) |w|^2, intercept unpenalized.
// theta = (w_1..w_p, b).
double glm_objective(const DenseMatrix& x, const std::vector<double>& y,
                     std::span<const double> theta, double l2);
std::vector<double> glm_gradient(const DenseMatrix& x, const std::vector<double>& y,
                                 std::span<const double> theta, double l2);

// ---------------------------------------------------------------------------
// Meta-classifier
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMetaClasses = kNumExceptionTypes + 1;  // last = Nominal
inline constexpr std::size_t kNominalClass = kNumExceptionTypes;

class MetaModel {
 public:
  // kMetaClasses x kNumExceptionTypes, row-major, plus per-class bias.
  std::vector<double> weights;
  std::array<double, kMetaClasses> bias{};
  bool converged = true;
  int iterations = 0;

  std::array<double, kMetaClasses> predict(std::span<const double> probs) const;
  std::size_t predict_class(std::span<const double> probs) const;
};

std::string meta_class_name(std::size_t cls);

MetaModel train_meta(const DenseMatrix& probs, const std::vector<std::size_t>& classes,
                     double l2 = 1e-3, int max_iter = 500, double tolerance = 1e-6);

// ---------------------------------------------------------------------------
// Serialization (versioned JSON)
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

std::string serialize(const GbmModel& m);
std::string serialize(const SimpleModel& m);
std::string serialize(const MetaModel& m);
GbmModel deserialize_gbm(const std::string& payload);
SimpleModel deserialize_simple(const std::string& payload);
MetaModel deserialize_meta(const std::string& payload);

nlohmann::json to_json(const Tree& t);
Tree tree_from_json(const nlohmann::json& j);

}  // namespace dqloop
