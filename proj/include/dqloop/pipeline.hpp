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

// End-to-end plumbing shared by the CLI and the service: label assembly,
// per-type model bundles, the on-disk model registry and monthly scoring.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/config.hpp"
#include "dqloop/datagen.hpp"
#include "dqloop/features.hpp"
#include "dqloop/learners.hpp"
#include "dqloop/metrics.hpp"
#include "dqloop/rank.hpp"
#include "dqloop/store.hpp"

namespace dqloop {

TrainingLabels labels_for(const Corpus& corpus, const std::vector<AuditRecord>& audits, Month cutoff,
                          const AssembleOptions& options = {});

// Rows up to `cutoff`, labels from audits, temporal split and encoders.
FeatureMatrix prepare_features(const Corpus& corpus, const std::vector<AuditRecord>& audits, Month cutoff,
                               const Config& config);

// Corpus restricted to months <= cutoff.
Corpus truncate_corpus(const Corpus& corpus, Month cutoff);

struct ModelBundle {
  Month cutoff{};
  std::string version;
  std::array<GbmModel, kNumExceptionTypes> models;
  MetaModel meta;
  std::array<std::vector<TargetEncoder>, kNumExceptionTypes> encoders;
  std::vector<std::string> base_features;
  TrainParams params;

  const GbmModel& model(ExceptionType t) const { return models[index_of(t)]; }
  std::array<const GbmModel*, kNumExceptionTypes> pointers() const;
};

// One GBM per type on train rows (early stopping on validation rows) and the
// meta-classifier on validation-row probabilities.
ModelBundle train_bundle(const FeatureMatrix& fm, const TrainParams& params, Month cutoff);

// "m<YYYY-MM>-<12 hex>" from the serialized models.
std::string bundle_version(const ModelBundle& bundle);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

// Meta class per row: first type (enumeration order) with a positive label,
// else the nominal class.
std::size_t meta_target(const FeatureMatrix& fm, std::size_t row);

// Versioned model directory with one active version; publishing a new
// version retires the previous one.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  void publish(const ModelBundle& bundle);
  std::optional<std::string> active() const;
  bool contains(const std::string& version) const;
  std::optional<std::string> superseded_by(const std::string& version) const;
  std::vector<std::string> versions() const;
  ModelBundle load(const std::string& version) const;

 private:
  void save_index() const;

  std::filesystem::path root_;
  std::vector<std::string> versions_;
  std::optional<std::string> active_;
  std::map<std::string, std::string> retired_;
};

// Base features for the whole corpus, encoded with the bundle's encoders.
// Rows up to the bundle cutoff are tagged train, later rows test.
FeatureMatrix serving_matrix(const Corpus& corpus, const ModelBundle& bundle);

struct ScoringRun {
  std::string run_id;
  std::string model_version;
  Month month{};
  std::vector<std::size_t> rows;  // serving-matrix rows of the month
  std::array<std::vector<double>, kNumExceptionTypes> probability;  // parallel to rows
  std::vector<std::size_t> meta_class;
  std::array<std::vector<RankedException>, kNumExceptionTypes> queues;
};

ScoringRun score_month(const ModelBundle& bundle, const FeatureMatrix& fm, Month month);

// NDCG@K of each type's test queue over the gold pool, or over the whole test
// pool when `gold_only` is false.
std::vector<NdcgRow> evaluate_ndcg(const ModelBundle& bundle, const FeatureMatrix& fm, bool gold_only = true,
                                   bool flagged_only = false, double threshold = 0.5);

}  // namespace dqloop
