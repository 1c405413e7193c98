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

// Engineered features: relative changes, change-vs-median, lag indicators,
// day counts and target-encoded categories; plus the temporal split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/datagen.hpp"
#include "dqloop/store.hpp"
#include "json.hpp"

namespace dqloop {

inline constexpr double kChangeClamp = 10.0;

// (curr - prev) / |prev| clamped to +-kChangeClamp; prev == 0 gives 0 when
// curr == 0, else the clamp bound with the sign of curr.
double pct_change(double curr, double prev);
// pct_change against the median of 1..3 window values (mean of two when two).
// Throws InvalidArgument on an empty window.
double median_pct_change(double curr, std::span<const double> window);
// Missing vs present counts as changed; missing vs missing does not.
bool lag_changed(const std::optional<std::string>& curr, const std::optional<std::string>& prev);

enum class FeatureKind : std::uint8_t { numeric, boolean, encoded };
std::string_view to_string(FeatureKind k);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  std::string source;     // snapshot column
  std::string transform;  // pct, med3, lag, level, days, onehot, flag, target
  std::string encoder;    // encoder id for encoded features

  bool operator==(const FeatureSpec&) const = default;
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;

  std::size_t size() const noexcept { return features.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::vector<std::string> names() const;
  // SHA-256 over names, kinds and transforms.
  std::string hash() const;
};

// Smoothed out-of-fold target encoder for one (column, label) pair.
class TargetEncoder {
 public:
  struct Stats {
    double count = 0.0;
    double positives = 0.0;
  };

  // `folds[i]` in [0, k) assigns train row i to a fold for out-of-fold
  // encoding. Throws on empty input, size mismatch, m <= 0 or labels not 0/1.
  // `prior` overrides the global label mean.
  static TargetEncoder fit(const std::vector<std::string>& categories,
                           const std::vector<std::uint8_t>& labels, double m, int k_folds,
                           const std::vector<int>& folds,
                           std::optional<double> prior = std::nullopt);

  // Full-train statistics (validation/test rows, serving).
  double encode(const std::string& category) const;
  // Statistics excluding `fold` (train rows).
  double encode_oof(const std::string& category, int fold) const;

  double prior() const noexcept { return prior_; }
  double smoothing() const noexcept { return m_; }
  int k_folds() const noexcept { return k_; }
  const std::map<std::string, Stats>& stats() const noexcept { return total_; }

  nlohmann::json to_json() const;
  static TargetEncoder from_json(const nlohmann::json& j);

 private:
  double m_ = 10.0;
  int k_ = 5;
  double prior_ = 0.0;
  std::map<std::string, Stats> total_;
  // Per fold: statistics of the fold itself (subtracted for out-of-fold).
  std::vector<std::map<std::string, Stats>> per_fold_;
  std::vector<Stats> fold_totals_;
  Stats all_{};
};

enum class SplitTag : std::uint8_t { train, validation, test };
std::string_view to_string(SplitTag t);

// Categorical snapshot columns that receive per-type target encodings.
const std::vector<std::string>& encoded_columns();

struct FeatureConfig {
  double smoothing = 10.0;
  int k_folds = 5;
  std::uint64_t seed = 1;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
};

struct FeatureMatrix {
  FeatureSchema base_schema;
  DenseMatrix base;  // rows x base features
  // Row identity.
  std::vector<std::string> instrument_ids;
  std::vector<Month> months;
  // Observed relevance weight: amount_outstanding, else market_cap.
  std::vector<double> relevance;
  // Raw categorical values, one vector per encoded column.
  std::vector<std::vector<std::string>> categories;
  // Labels per type, and whether the deciding audit was iDQM-sourced.
  std::array<std::vector<std::uint8_t>, kNumExceptionTypes> labels;
  std::array<std::vector<std::uint8_t>, kNumExceptionTypes> label_gold;
  std::vector<SplitTag> split;
  std::vector<int> folds;
  // Fitted encoders: [type][column].
  std::array<std::vector<TargetEncoder>, kNumExceptionTypes> encoders;
  // Encoded values: [type] -> rows x encoded_columns().size().
  std::array<DenseMatrix, kNumExceptionTypes> encoded;

  std::size_t rows() const noexcept { return instrument_ids.size(); }
  bool encoded_ready() const noexcept { return !encoders[0].empty(); }

  // Base features plus the type's own encoded columns.
  FeatureSchema schema(ExceptionType type) const;
  DenseMatrix view(ExceptionType type) const;
  DenseMatrix view(ExceptionType type, std::span<const std::size_t> rows) const;
  std::vector<double> row_view(ExceptionType type, std::size_t row) const;

  std::vector<std::size_t> rows_with(SplitTag tag) const;
  std::vector<std::size_t> rows_in_month(Month m) const;
  bool gold(ExceptionType type, std::size_t row) const {
    return split[row] == SplitTag::test && label_gold[index_of(type)][row];
  }
  std::optional<std::size_t> find(const std::string& instrument_id, Month month) const;
};

// Base features for every row from the 4th corpus month onward.
FeatureMatrix build_matrix(const Corpus& corpus);

// Labels from audits (as assembled for training) ...
void attach_labels(FeatureMatrix& fm, const TrainingLabels& labels);
// ... or straight from generator ground truth (gold = never).
void attach_labels(FeatureMatrix& fm, const GroundTruth& truth);

struct SplitBoundaries {
  Month last_train{};
  Month last_validation{};
};

// Month boundaries whose row-count proportions are closest (L1) to the ratios
// without splitting a month. Throws on fewer than 3 distinct months.
SplitBoundaries choose_split(const std::vector<std::pair<Month, std::size_t>>& month_counts,
                             const std::array<double, 3>& ratios);
void temporal_split(FeatureMatrix& fm, const std::array<double, 3>& ratios);
void apply_split(FeatureMatrix& fm, const SplitBoundaries& b);

// Instrument-grouped, seeded fold ids.
std::vector<int> assign_folds(const std::vector<std::string>& instrument_ids, int k,
                              std::uint64_t seed);

// Fits encoders on train rows and encodes every row (out-of-fold for train).
void fit_encoders(FeatureMatrix& fm, const FeatureConfig& config);

// Encodes every row with already fitted encoders (full-train statistics).
// Used when scoring with a deployed model.
void apply_encoders(FeatureMatrix& fm,
                    const std::array<std::vector<TargetEncoder>, kNumExceptionTypes>& encoders);

// Full featurization: base, labels, split, encoders.
FeatureMatrix featurize(const Corpus& corpus, const TrainingLabels& labels,
                        const FeatureConfig& config);

// Columnar CSV of base + all encoded columns + labels + split, and a JSON
// schema sidecar carrying encoder parameters.
void write_matrix_csv(const FeatureMatrix& fm, const std::filesystem::path& path);
nlohmann::json schema_json(const FeatureMatrix& fm, const FeatureConfig& config);

}  // namespace dqloop
