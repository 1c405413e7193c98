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

// Bootstrap-ensemble uncertainty and drift of mean |SHAP| over months.

#include <cstdint>
#include <string>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/learners.hpp"
#include "json.hpp"

namespace dqloop {

// Indices of a with-replacement resample of size n.
std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed);

// B models on resamples of (x, y); member b uses mix_seed(seed, b). A resample
// with a single class is redrawn up to 10 times before throwing.
std::vector<GbmModel> fit_bootstrap_ensemble(const DenseMatrix& x, const std::vector<std::uint8_t>& y,
                                             std::size_t b, const TrainParams& params,
                                             const std::string& schema_hash, std::uint64_t seed);

struct UncertaintyEstimate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t b = 0;
};

UncertaintyEstimate uncertainty(const std::vector<GbmModel>& ensemble, std::span<const double> row);
std::vector<UncertaintyEstimate> uncertainty(const std::vector<GbmModel>& ensemble, const DenseMatrix& x);
double mean_std(const std::vector<UncertaintyEstimate>& estimates);

// Alarm level for the mean std of a batch of `batch_size` rows: the `q`
// quantile of mean std over `draws` random in-distribution batches.
double uncertainty_baseline(const std::vector<UncertaintyEstimate>& in_distribution, std::size_t batch_size,
                            double q = 0.99, std::size_t draws = 500, std::uint64_t seed = 1);

struct DriftOptions {
  std::size_t window = 6;
  double k = 3.0;
  double epsilon = 1e-9;
  // A flag also needs |x_t - trailing mean| > min_relative_change * trailing mean.
  double min_relative_change = 0.5;
};

struct DriftReport {
  std::vector<std::string> features;
  std::vector<Month> months;
  // [feature][month]
  std::vector<std::vector<double>> series;
  std::vector<std::vector<double>> trailing_mean;
  std::vector<std::vector<double>> trailing_std;
  std::vector<std::vector<bool>> flags;
  DriftOptions options;

  std::size_t flag_count() const;
  bool flagged(std::size_t feature, std::size_t month) const { return flags[feature][month]; }
  nlohmann::json to_json() const;
  // Only flagged (feature, month) pairs.
  nlohmann::json alarms_json() const;
};

// series[f][t] -> report. Month t is tested against months t-W..t-1 only.
// Throws when fewer than W+1 months are given.
DriftReport drift_from_series(const std::vector<std::string>& features, const std::vector<Month>& months,
                              std::vector<std::vector<double>> series, const DriftOptions& options = {});

// Mean |SHAP| per feature and month. Throws on an empty month batch.
DriftReport shap_drift(const GbmModel& model, const std::vector<DenseMatrix>& batches,
                       const std::vector<Month>& months, const std::vector<std::string>& features,
                       const DriftOptions& options = {});

}  // namespace dqloop
