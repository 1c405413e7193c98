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

#include "dqloop/monitor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "dqloop/explain.hpp"

namespace dqloop {

std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("bootstrap of an empty set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

namespace {

GbmModel fit_member(const DenseMatrix& x, const std::vector<std::uint8_t>& y, const TrainParams& params,
                    const std::string& schema_hash, std::uint64_t member_seed) {
  for (std::uint64_t attempt = 0; attempt <= 10; ++attempt) {
    const auto idx = bootstrap_indices(x.rows(), mix_seed(member_seed, attempt));
    std::vector<double> w(x.rows(), 0.0);
    std::size_t pos = 0;
    for (auto i : idx) {
      w[i] += 1.0;
      pos += y[i];
    }
    if (pos == 0 || pos == idx.size()) continue;
    TrainParams p = params;
    p.seed = member_seed;
    return train_gbm(x, y, p, schema_hash, nullptr, nullptr, &w);
  }
  throw InvalidArgument("bootstrap resample has a single class after 10 retries");
}

}  // namespace

std::vector<GbmModel> fit_bootstrap_ensemble(const DenseMatrix& x, const std::vector<std::uint8_t>& y,
                                             std::size_t b, const TrainParams& params,
                                             const std::string& schema_hash, std::uint64_t seed) {
  if (b < 2) throw InvalidArgument("bootstrap ensemble needs B >= 2");
  if (y.size() != x.rows()) throw InvalidArgument("label count differs from rows");
  params.validate();
  std::vector<GbmModel> out(b);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t m = next++; m < b; m = next++) {
      try {
        out[m] = fit_member(x, y, params, schema_hash, mix_seed(seed, m));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, b);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

UncertaintyEstimate uncertainty(const std::vector<GbmModel>& ensemble, std::span<const double> row) {
  if (ensemble.empty()) throw InvalidArgument("empty ensemble");
  double sum = 0, sq = 0;
  for (const auto& m : ensemble) {
    if (row.size() != m.n_features) throw SchemaMismatch("row width differs from ensemble");
    const double p = m.predict_proba(row);
    sum += p;
    sq += p * p;
  }
  const double n = static_cast<double>(ensemble.size());
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean)), ensemble.size()};
}

std::vector<UncertaintyEstimate> uncertainty(const std::vector<GbmModel>& ensemble, const DenseMatrix& x) {
  std::vector<UncertaintyEstimate> out;
  out.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(uncertainty(ensemble, x.row(i)));
  return out;
}

double mean_std(const std::vector<UncertaintyEstimate>& estimates) {
  if (estimates.empty()) throw InvalidArgument("no estimates");
  double s = 0;
  for (const auto& e : estimates) s += e.std;
  return s / static_cast<double>(estimates.size());
}

double uncertainty_baseline(const std::vector<UncertaintyEstimate>& in_distribution, std::size_t batch_size,
                            double q, std::size_t draws, std::uint64_t seed) {
  if (in_distribution.empty() || batch_size == 0 || draws == 0) {
    throw InvalidArgument("uncertainty baseline needs rows, batch size and draws");
  }
  if (!(q > 0 && q < 1)) throw InvalidArgument("quantile must lie in (0,1)");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, in_distribution.size() - 1);
  std::vector<double> means(draws);
  for (auto& m : means) {
    double s = 0;
    for (std::size_t i = 0; i < batch_size; ++i) s += in_distribution[pick(rng)].std;
    m = s / static_cast<double>(batch_size);
  }
  std::sort(means.begin(), means.end());
  const double pos = q * static_cast<double>(draws - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, draws - 1);
  return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
}

std::size_t DriftReport::flag_count() const {
  std::size_t n = 0;
  for (const auto& f : flags) n += static_cast<std::size_t>(std::count(f.begin(), f.end(), true));
  return n;
}

nlohmann::json DriftReport::to_json() const {
  nlohmann::json month_names = nlohmann::json::array();
  for (auto m : months) month_names.push_back(format_month(m));
  nlohmann::json per_feature = nlohmann::json::object();
  for (std::size_t f = 0; f < features.size(); ++f) {
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t t = 0; t < months.size(); ++t) {
      rows[format_month(months[t])] = {{"mean_abs_shap", series[f][t]},
                                       {"trailing_mean", trailing_mean[f][t]},
                                       {"trailing_std", trailing_std[f][t]},
                                       {"drift", static_cast<bool>(flags[f][t])}};
    }
    per_feature[features[f]] = rows;
  }
  return {{"window", options.window},
          {"k", options.k},
          {"epsilon", options.epsilon},
          {"min_relative_change", options.min_relative_change},
          {"months", month_names},
          {"features", per_feature},
          {"alarms", alarms_json()}};
}

nlohmann::json DriftReport::alarms_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t t = 0; t < months.size(); ++t) {
    for (std::size_t f = 0; f < features.size(); ++f) {
      if (!flags[f][t]) continue;
      out.push_back({{"feature", features[f]},
                     {"month", format_month(months[t])},
                     {"mean_abs_shap", series[f][t]},
                     {"trailing_mean", trailing_mean[f][t]},
                     {"trailing_std", trailing_std[f][t]}});
    }
  }
  return out;
}

DriftReport drift_from_series(const std::vector<std::string>& features, const std::vector<Month>& months,
                              std::vector<std::vector<double>> series, const DriftOptions& options) {
  if (options.window < 2) throw InvalidArgument("drift window must be >= 2");
  if (months.size() < options.window + 1) throw InvalidArgument("drift needs at least W+1 months");
  if (series.size() != features.size()) throw InvalidArgument("series count differs from features");
  DriftReport r;
  r.features = features;
  r.months = months;
  r.options = options;
  const std::size_t nt = months.size();
  const std::size_t w = options.window;
  for (auto& s : series) {
    if (s.size() != nt) throw InvalidArgument("series length differs from months");
    std::vector<double> mean(nt, 0.0), sd(nt, 0.0);
    std::vector<bool> flag(nt, false);
    for (std::size_t t = w; t < nt; ++t) {
      double m = 0;
      for (std::size_t u = t - w; u < t; ++u) m += s[u];
      m /= static_cast<double>(w);
      double v = 0;
      for (std::size_t u = t - w; u < t; ++u) v += (s[u] - m) * (s[u] - m);
      const double sigma = std::sqrt(v / static_cast<double>(w - 1));
      mean[t] = m;
      sd[t] = sigma;
      const double dev = std::abs(s[t] - m);
      flag[t] = dev > options.k * sigma && dev > options.epsilon &&
                dev > options.min_relative_change * std::abs(m);
    }
    r.trailing_mean.push_back(std::move(mean));
    r.trailing_std.push_back(std::move(sd));
    r.flags.push_back(std::move(flag));
  }
  r.series = std::move(series);
  return r;
}

DriftReport shap_drift(const GbmModel& model, const std::vector<DenseMatrix>& batches,
                       const std::vector<Month>& months, const std::vector<std::string>& features,
                       const DriftOptions& options) {
  if (batches.size() != months.size()) throw InvalidArgument("one batch per month required");
  if (features.size() != model.n_features) throw SchemaMismatch("feature names differ from model width");
  std::vector<std::vector<double>> series(features.size(), std::vector<double>(months.size()));
  for (std::size_t t = 0; t < batches.size(); ++t) {
    if (batches[t].empty()) throw InvalidArgument("empty batch for " + format_month(months[t]));
    model.check_schema(model.schema_hash, batches[t].cols());
    const auto g = shap_global(model, batches[t]);
    for (std::size_t f = 0; f < features.size(); ++f) series[f][t] = g[f];
  }
  return drift_from_series(features, months, std::move(series), options);
}

}  // namespace dqloop
