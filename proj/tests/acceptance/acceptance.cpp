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

// Acceptance suite: one PASS/FAIL line per criterion, followed by the
// measured values. Exit status is non-zero when any criterion fails.
//
//   acceptance --cli <path to dqloop> [--work <dir>] [--only 1,4,8]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dqloop/explain.hpp"
#include "dqloop/monitor.hpp"
#include "dqloop/pipeline.hpp"
#include "oracles.hpp"

using namespace dqloop;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kMinPrecision = 0.7;
constexpr double kMinRecall = 0.7;
constexpr double kBenchmarkSeconds = 300.0;
constexpr double kNullAucLow = 0.45;
constexpr double kNullAucHigh = 0.55;
constexpr double kAdditivityTol = 1e-6;
constexpr double kShapleyTol = 1e-9;
constexpr double kNdcgTol = 1e-12;
constexpr double kGradientTol = 1e-5;
constexpr double kCostTol = 1e-12;
constexpr double kMinFidelity = 0.9;
constexpr double kShiftSigmas = 5.0;
constexpr int kMonitorRuns = 20;
constexpr double kMinShiftDetection = 0.90;
constexpr double kMinQuietRate = 0.95;
constexpr double kMinRecallGain = 0.2;
constexpr double kLoopSeconds = 600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int decimals = 4) { return format_fixed(v, decimals); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared benchmark: default generator, full pipeline.
// ---------------------------------------------------------------------------

struct Benchmark {
  Config config;
  InjectionResult data;
  FeatureMatrix fm;
  ModelBundle bundle;
  EvaluationReport report;
  double seconds = 0.0;
};

std::unique_ptr<Benchmark> run_benchmark(double signal_strength) {
  auto b = std::make_unique<Benchmark>();
  b->config.gen.signal_strength = signal_strength;
  const auto start = Clock::now();
  b->data = inject_exceptions(generate_universe(b->config.gen), b->config.gen);
  const Month cutoff = b->data.corpus.months().back();
  b->fm = prepare_features(b->data.corpus, b->data.audit_log, cutoff, b->config);
  b->bundle = train_bundle(b->fm, b->config.train, cutoff);
  b->report = evaluate_models(b->bundle.pointers(), b->fm, b->config.threshold);
  b->seconds = seconds_since(start);
  return b;
}

Benchmark& benchmark() {
  static std::unique_ptr<Benchmark> b = run_benchmark(1.0);
  return *b;
}

// Every `step`-th row so that at most `n` are taken.
std::vector<std::size_t> spread(const std::vector<std::size_t>& rows, std::size_t n) {
  std::vector<std::size_t> out;
  const std::size_t step = std::max<std::size_t>(1, rows.size() / n);
  for (std::size_t k = 0; k < rows.size() && out.size() < n; k += step) out.push_back(rows[k]);
  return out;
}

// ---------------------------------------------------------------------------
// 1. Synthetic benchmark
// ---------------------------------------------------------------------------

Outcome criterion_1() {
  auto& b = benchmark();
  Outcome o{true, ""};
  std::ostringstream s;
  s << "rows=" << b.fm.rows() << " seconds=" << fmt(b.seconds, 1);
  o.pass = b.seconds < kBenchmarkSeconds;
  for (const auto& r : b.report.full) {
    const bool ok = r.precision.defined && r.recall.defined && r.precision.value >= kMinPrecision &&
                    r.recall.value >= kMinRecall;
    o.pass = o.pass && ok;
    s << ' ' << to_string(r.type) << "(P=" << fmt(r.precision.value, 3) << ",R=" << fmt(r.recall.value, 3) << ')';
  }
  o.detail = s.str();
  return o;
}

// ---------------------------------------------------------------------------
// 2. Null signal
// ---------------------------------------------------------------------------

Outcome criterion_2() {
  const auto b = run_benchmark(0.0);
  Outcome o{true, ""};
  std::ostringstream s;
  for (const auto& r : b->report.full) {
    const bool ok = r.auc.defined && r.auc.value >= kNullAucLow && r.auc.value <= kNullAucHigh;
    o.pass = o.pass && ok;
    s << to_string(r.type) << "=" << fmt(r.auc.value, 3) << ' ';
  }
  o.detail = "auc " + s.str();
  return o;
}

// ---------------------------------------------------------------------------
// 3. Shapley correctness
// ---------------------------------------------------------------------------

Outcome criterion_3() {
  auto& b = benchmark();
  double worst_additivity = 0.0;
  std::size_t rows_checked = 0;
  std::vector<std::size_t> all(b.fm.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto sample = spread(all, 1000);
  for (auto type : kAllExceptionTypes) {
    const auto& model = b.bundle.model(type);
    for (auto i : sample) {
      const auto a = shap_local(model, b.fm.row_view(type, i));
      worst_additivity = std::max(worst_additivity, a.additivity_error());
      ++rows_checked;
    }
  }

  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_exact = 0.0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 8);
    const int depth = 1 + static_cast<int>(rng() % 3);
    GbmModel model;
    model.n_features = static_cast<std::size_t>(m);
    model.base_score = u(rng) - 0.5;
    const int n_trees = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < n_trees; ++k) model.trees.push_back(oracle::random_tree(rng, depth, m));
    std::vector<double> row(static_cast<std::size_t>(m));
    for (auto& v : row) v = std::round(u(rng) * 10) / 10;
    const auto phi = oracle::brute_shapley(
        [&](unsigned s) {
          double sum = 0;
          for (const auto& t : model.trees) sum += oracle::tree_value(t, 0, row, s);
          return sum;
        },
        static_cast<std::size_t>(m));
    const auto a = shap_local(model, row);
    for (std::size_t j = 0; j < phi.size(); ++j) worst_exact = std::max(worst_exact, std::abs(phi[j] - a.contributions[j]));
  }
  return {worst_additivity <= kAdditivityTol && worst_exact <= kShapleyTol,
          "additivity max=" + sci(worst_additivity) + " over " + std::to_string(rows_checked) +
              " rows; brute-force max=" + sci(worst_exact) + " over " + std::to_string(trials) + " fixtures"};
}

// ---------------------------------------------------------------------------
// 4. NDCG oracle
// ---------------------------------------------------------------------------

Outcome criterion_4() {
  std::mt19937_64 rng(777);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  bool ideal_ok = true;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = len(rng);
    const double rate = u(rng);
    std::vector<int> rel(n);
    for (auto& r : rel) r = u(rng) < rate;
    const std::size_t p = 1 + len(rng) % (n + 20);
    worst = std::max(worst, std::abs(ndcg(rel, p) - oracle::oracle_ndcg(rel, p)));
    auto ideal = rel;
    std::sort(ideal.rbegin(), ideal.rend());
    if (std::count(rel.begin(), rel.end(), 1) > 0) ideal_ok = ideal_ok && ndcg(ideal, p) == 1.0;
  }
  // Zero-positive pool through the queue evaluation path.
  std::vector<Prediction> preds;
  for (int i = 0; i < 50; ++i) {
    preds.push_back({"I" + std::to_string(i), parse_month("2021-03"), ExceptionType::CouponDate, u(rng), 1e6 * u(rng)});
  }
  const auto rows = evaluate_ranking({rank_queue(preds)}, [](const RankedException&) { return false; });
  bool zero_ok = ndcg(std::vector<int>(10, 0), 5) == 0.0;
  for (const auto& r : rows) zero_ok = zero_ok && r.ndcg == 0.0 && r.positives == 0;
  const bool pass = worst <= kNdcgTol && ideal_ok && zero_ok;
  return {pass, "max |diff|=" + sci(worst) + " over 1000 cases; ideal=1 " + (ideal_ok ? "yes" : "no") +
                    "; zero-positive=0 " + (zero_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 5. GLM gradient
// ---------------------------------------------------------------------------

Outcome criterion_5() {
  std::mt19937_64 rng(5150);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 80, p = 6;
  DenseMatrix x(n, p);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(i, j) = g(rng);
    y[i] = u(rng) < 0.3 ? 1.0 : 0.0;
  }
  const double h = 1e-5;
  double worst = 0;
  for (int point = 0; point < 100; ++point) {
    std::vector<double> theta(p + 1);
    for (auto& t : theta) t = 2 * g(rng);
    const double l2 = u(rng) * 3;
    const auto grad = glm_gradient(x, y, theta, l2);
    for (std::size_t k = 0; k <= p; ++k) {
      auto up = theta, down = theta;
      up[k] += h;
      down[k] -= h;
      const double fd = (glm_objective(x, y, up, l2) - glm_objective(x, y, down, l2)) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-3}));
    }
  }
  return {worst <= kGradientTol, "max relative error=" + sci(worst) + " over 100 points"};
}

// ---------------------------------------------------------------------------
// 6. Counterfactuals
// ---------------------------------------------------------------------------

CfVariable grid_var(const std::string& name, std::size_t feature, std::vector<double> grid, double weight,
                    double scale) {
  CfVariable v;
  v.name = name;
  v.source = name;
  v.numeric = true;
  v.features = {feature};
  v.weight = weight;
  v.scale = scale;
  for (double c : grid) {
    v.candidates.push_back({c});
    v.labels.push_back(format_double(c));
  }
  return v;
}

Outcome criterion_6() {
  std::size_t emitted = 0, flipped = 0, immutable_changes = 0, min_cases = 0, min_matches = 0;

  // Exhaustively searchable instances against the brute-force minimum.
  std::mt19937_64 rng(6006);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 400, p = 5;
    DenseMatrix x(n, p);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) x(i, j) = std::round(g(rng) * 4) / 4;
      y[i] = u(rng) < logistic(1.5 * x(i, 0) - x(i, 1) + (x(i, 2) > 0.5 ? 1.0 : 0.0));
    }
    TrainParams params;
    params.n_rounds = 30;
    params.max_depth = 3;
    params.min_child_cover = 1.0;
    const auto model = train_gbm(x, y, params, "fixture");
    MutabilityPolicy policy;
    policy.n_features = p;
    for (std::size_t j = 0; j < p; ++j) {
      std::vector<double> grid;
      const std::size_t k = 2 + rng() % 4;
      for (std::size_t c = 0; c < k; ++c) grid.push_back(std::round((u(rng) * 6 - 3) * 4) / 4);
      std::sort(grid.begin(), grid.end());
      grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
      policy.variables.push_back(grid_var("f" + std::to_string(j), j, grid, 0.5 + u(rng), 0.5 + u(rng)));
    }
    for (std::size_t j = 1 + trial % 3; j < p; ++j) policy.variables[j].immutable = true;
    const auto row = x.row(static_cast<std::size_t>(trial));
    const auto res = find_counterfactuals(model, row, policy);
    const double brute = oracle::brute_min_cost(
        [&](std::span<const double> r) { return model.predict_proba(r); }, row, policy, 0.5);
    if (!std::isinf(brute) && res.exhaustive) {
      ++min_cases;
      min_matches += !res.items.empty() && std::abs(res.items.front().cost - brute) <= kCostTol * std::max(1.0, brute);
    }
    const bool orig = model.predict_proba(row) >= 0.5;
    for (const auto& cf : res.items) {
      ++emitted;
      flipped += (model.predict_proba(cf.row) >= 0.5) != orig;
      for (std::size_t j = 1 + trial % 3; j < p; ++j) immutable_changes += cf.row[j] != row[j];
    }
  }

  // Trained benchmark models with the default mutability policy.
  auto& b = benchmark();
  const auto test = b.fm.rows_with(SplitTag::test);
  for (auto type : kAllExceptionTypes) {
    const auto& model = b.bundle.model(type);
    const auto policy = make_policy(b.fm, type);
    auto opts = b.config.counterfactual;
    opts.threshold = b.config.threshold;
    // Highest-probability test rows first: the ones a reviewer would open.
    std::vector<std::pair<double, std::size_t>> scored;
    for (auto i : spread(test, 3000)) scored.emplace_back(model.predict_proba(b.fm.row_view(type, i)), i);
    std::sort(scored.rbegin(), scored.rend());
    for (std::size_t k = 0; k < std::min<std::size_t>(4, scored.size()); ++k) {
      const auto row = b.fm.row_view(type, scored[k].second);
      const bool orig = model.predict_proba(row) >= opts.threshold;
      const auto res = find_counterfactuals(model, row, policy, opts);
      for (const auto& cf : res.items) {
        ++emitted;
        flipped += (model.predict_proba(cf.row) >= opts.threshold) != orig;
        for (const auto& v : policy.variables) {
          if (!v.immutable) continue;
          for (auto j : v.features) immutable_changes += cf.row[j] != row[j];
        }
      }
    }
  }
  const bool pass = emitted > 0 && flipped == emitted && immutable_changes == 0 && min_cases > 0 &&
                    min_matches == min_cases;
  return {pass, "flipped " + std::to_string(flipped) + "/" + std::to_string(emitted) +
                    "; immutable changes " + std::to_string(immutable_changes) + "; brute-force minimum matched " +
                    std::to_string(min_matches) + "/" + std::to_string(min_cases)};
}

// ---------------------------------------------------------------------------
// 7. Model copies
// ---------------------------------------------------------------------------

Outcome criterion_7() {
  auto& b = benchmark();
  const auto train = b.fm.rows_with(SplitTag::train);
  const auto valid = b.fm.rows_with(SplitTag::validation);
  const auto test = b.fm.rows_with(SplitTag::test);
  Outcome o{true, ""};
  std::ostringstream s;
  const auto start = Clock::now();
  for (auto type : alphabetical_types()) {
    const auto t = index_of(type);
    std::vector<std::uint8_t> yt;
    for (auto i : test) yt.push_back(b.fm.labels[t][i]);
    const auto pool = b.fm.view(type, train);
    const auto holdout = b.fm.view(type, valid);
    const auto xt = b.fm.view(type, test);
    const auto tree = copy_model(b.bundle.models[t], pool, SimpleKind::tree, holdout, xt, yt, b.config.copy_tree,
                                 b.config.threshold);
    const auto glm = copy_model(b.bundle.models[t], pool, SimpleKind::glm, holdout, xt, yt, b.config.copy_glm,
                                b.config.threshold);
    const double orig = tree.original_auc.value;
    const bool ok = orig >= tree.copy_auc.value && orig >= glm.copy_auc.value && tree.fidelity >= kMinFidelity;
    o.pass = o.pass && ok;
    s << to_string(type) << "(auc " << fmt(orig, 3) << '/' << fmt(tree.copy_auc.value, 3) << '/'
      << fmt(glm.copy_auc.value, 3) << " fid " << fmt(tree.fidelity, 3) << ") ";
  }
  s << "seconds=" << fmt(seconds_since(start), 1);
  o.detail = s.str();
  return o;
}

// ---------------------------------------------------------------------------
// 8. Monitoring
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

struct MonitorRun {
  ExceptionType type = ExceptionType::AmountOutstanding;
  bool uncertainty_alarm = false;
  bool drift_flagged = false;
  bool quiet = false;
};

// One seeded run on a fresh corpus. The model and the bootstrap ensemble see
// the reference instruments only; everything else forms the in-distribution
// pool. Monthly batches are drawn i.i.d. from that pool (a stationary stream),
// and from month 8 on the chosen feature is moved by +5 training sd.
MonitorRun monitor_run(int run) {
  Config config;
  config.gen.n_instruments = 400;
  config.gen.seed = 1000 + static_cast<std::uint64_t>(run);
  config.features.seed = config.gen.seed;
  const auto data = inject_exceptions(generate_universe(config.gen), config.gen);
  const Month latest = data.corpus.months().back();
  const auto fm = prepare_features(data.corpus, data.audit_log, latest, config);
  const auto type = kAllExceptionTypes[static_cast<std::size_t>(run) % kNumExceptionTypes];
  const auto t = index_of(type);
  const auto schema = fm.schema(type);

  std::vector<std::size_t> reference, pool;
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    const bool ref = fm.split[i] == SplitTag::train && fnv1a(fm.instrument_ids[i]) % 4 != 0;
    (ref ? reference : pool).push_back(i);
  }
  std::vector<std::uint8_t> y;
  for (auto i : reference) y.push_back(fm.labels[t][i]);
  TrainParams params = config.train;
  params.seed = config.gen.seed;
  const auto xr = fm.view(type, reference);
  const auto model = train_gbm(xr, y, params, schema.hash());

  // The shifted feature: most important feature whose attribution grows with
  // its value, so the shift points toward the exception region. A shift the
  // other way lands in flat, confidently nominal leaves where the ensemble
  // agrees, and the spread drops instead of rising.
  const auto probe = fm.view(type, spread(pool, 500));
  std::vector<Attribution> local;
  for (std::size_t i = 0; i < probe.rows(); ++i) local.push_back(shap_local(model, probe.row(i)));
  std::vector<double> importance(schema.size(), 0.0);
  for (const auto& a : local)
    for (std::size_t j = 0; j < schema.size(); ++j) importance[j] += std::abs(a.contributions[j]);
  std::optional<std::size_t> feature;
  for (auto j : importance_order(importance)) {
    if (importance[j] == 0.0) continue;
    double mx = 0, mp = 0;
    for (std::size_t i = 0; i < local.size(); ++i) {
      mx += probe(i, j);
      mp += local[i].contributions[j];
    }
    mx /= static_cast<double>(local.size());
    mp /= static_cast<double>(local.size());
    double cov = 0;
    for (std::size_t i = 0; i < local.size(); ++i) cov += (probe(i, j) - mx) * (local[i].contributions[j] - mp);
    if (cov > 0) {
      feature = j;
      break;
    }
  }
  if (!feature) feature = importance_order(importance).front();
  const std::size_t f = *feature;
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < xr.rows(); ++i) mean += xr(i, f);
  mean /= static_cast<double>(xr.rows());
  for (std::size_t i = 0; i < xr.rows(); ++i) sq += (xr(i, f) - mean) * (xr(i, f) - mean);
  const double sd = std::sqrt(sq / static_cast<double>(xr.rows()));

  // Stationary stream of 13 monthly batches.
  constexpr std::size_t kMonths = 13, kShiftMonth = 8;
  constexpr std::size_t kBatch = 1000;
  std::mt19937_64 rng(mix_seed(config.gen.seed, 77));
  std::vector<DenseMatrix> batches;
  std::vector<Month> months;
  for (std::size_t m = 0; m < kMonths; ++m) {
    std::vector<std::size_t> rows(kBatch);
    for (auto& r : rows) r = pool[rng() % pool.size()];
    batches.push_back(fm.view(type, rows));
    months.push_back(add_months(config.gen.start_month, static_cast<int>(m)));
  }
  auto shifted = batches;
  for (std::size_t m = kShiftMonth; m < kMonths; ++m)
    for (std::size_t i = 0; i < shifted[m].rows(); ++i) shifted[m](i, f) += kShiftSigmas * sd;

  MonitorRun out;
  out.type = type;
  const auto names = schema.names();
  out.quiet = shap_drift(model, batches, months, names, config.drift).flag_count() == 0;
  out.drift_flagged = shap_drift(model, shifted, months, names, config.drift).flagged(f, kShiftMonth);

  TrainParams ep = params;
  ep.n_rounds = std::max<int>(1, static_cast<int>(model.trees.size()));
  const auto ensemble = fit_bootstrap_ensemble(xr, y, config.bootstrap_b, ep, schema.hash(), mix_seed(params.seed, t));
  const auto ref = uncertainty(ensemble, fm.view(type, pool));
  const double baseline = uncertainty_baseline(ref, kBatch, 0.99, 500, mix_seed(params.seed, 100 + t));
  out.uncertainty_alarm = mean_std(uncertainty(ensemble, shifted[kShiftMonth])) > baseline;
  return out;
}

Outcome criterion_8() {
  int alarms = 0, flagged = 0, quiet = 0;
  std::map<std::string, std::pair<int, int>> by_type;  // alarms, runs
  for (int run = 0; run < kMonitorRuns; ++run) {
    const auto r = monitor_run(run);
    alarms += r.uncertainty_alarm;
    flagged += r.drift_flagged;
    quiet += r.quiet;
    auto& slot = by_type[std::string(to_string(r.type))];
    slot.first += r.uncertainty_alarm;
    ++slot.second;
  }
  const double n = kMonitorRuns;
  const bool pass = alarms / n >= kMinShiftDetection && flagged / n >= kMinShiftDetection && quiet / n >= kMinQuietRate;
  std::string detail = "uncertainty alarms " + std::to_string(alarms) + "/" + std::to_string(kMonitorRuns) + " (";
  for (const auto& [type, c] : by_type) detail += type + " " + std::to_string(c.first) + "/" + std::to_string(c.second) + " ";
  detail.back() = ')';
  detail += "; drift flags shifted feature " + std::to_string(flagged) + "/" + std::to_string(kMonitorRuns) +
            "; stationary quiet " + std::to_string(quiet) + "/" + std::to_string(kMonitorRuns);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 9 and 10: the command line tool
// ---------------------------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome criterion_9(const std::string& cli, const fs::path& work) {
  const auto dir = work / "loop";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto start = Clock::now();
  const int rc = run_cli(cli, "--quiet --out-dir \"" + dir.string() + "\" loop-demo --corrections 200", dir / "log.txt");
  const double elapsed = seconds_since(start);
  if (rc != 0) return {false, "loop-demo exited with " + std::to_string(rc)};
  const auto j = nlohmann::json::parse(std::ifstream(dir / "loop_demo.json"));
  const double before = j.at("recall_before"), after = j.at("recall_after");
  const bool pass = after - before >= kMinRecallGain && elapsed < kLoopSeconds && j.at("corrections") == 200;
  return {pass, "recall " + fmt(before, 3) + " -> " + fmt(after, 3) + " with " + j.at("corrections").dump() +
                    " corrections in " + fmt(elapsed, 1) + "s"};
}

// Regular files under `root`, relative, excluding run manifests (they carry
// wall-clock timings).
std::map<std::string, std::string> artifact_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (e.path().filename().string().rfind("manifest_", 0) == 0 || rel == "log.txt") continue;
    out[rel] = sha256_file(e.path().string());
  }
  return out;
}

Outcome criterion_10(const std::string& cli, const fs::path& work) {
  // A reduced corpus keeps the doubled run short; determinism does not
  // depend on size.
  const auto config = work / "determinism.toml";
  {
    std::ofstream f(config);
    f << "[gen]\nn_instruments = 800\nn_months = 10\n\n[train]\nn_rounds = 60\n\n[monitor]\nbootstrap_b = 5\n";
  }
  const std::vector<std::string> commands{"gen",  "featurize", "train", "evaluate", "rank",
                                          "explain", "copy", "monitor", "loop-demo"};
  std::array<std::map<std::string, std::string>, 2> digests;
  std::string failures;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = work / ("det" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& c : commands) {
      const std::string extra = c == "loop-demo" ? " --corrections 50" : "";
      const int rc = run_cli(cli, "--quiet --seed 7 --config \"" + config.string() + "\" --out-dir \"" +
                                      dir.string() + "\" " + c + extra,
                             dir / "log.txt");
      if (rc != 0) failures += c + " exited " + std::to_string(rc) + "; ";
    }
    run_cli(cli, "defaults", dir / "defaults.toml");
    digests[rep] = artifact_digests(dir);
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, digest] : digests[0]) {
    const auto it = digests[1].find(name);
    if (it == digests[1].end() || it->second != digest) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  differing += digests[1].size() > digests[0].size() ? digests[1].size() - digests[0].size() : 0;
  const bool pass = failures.empty() && differing == 0 && digests[0].size() > 10;
  std::string detail = std::to_string(digests[0].size()) + " artifacts from " + std::to_string(commands.size() + 1) +
                       " subcommands, " + std::to_string(differing) + " differ";
  if (!first.empty()) detail += " (first: " + first + ")";
  if (!failures.empty()) detail += "; " + failures;
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dqloop acceptance suite"};
  std::string cli;
  std::string work = (fs::temp_directory_path() / "dqloop_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "Path to the dqloop executable")->required();
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"synthetic benchmark precision/recall and runtime", criterion_1}},
      {2, {"null signal AUC", criterion_2}},
      {3, {"Shapley additivity and brute-force agreement", criterion_3}},
      {4, {"NDCG oracle equivalence", criterion_4}},
      {5, {"GLM gradient vs finite differences", criterion_5}},
      {6, {"counterfactual validity, immutables, minimum cost", criterion_6}},
      {7, {"model copy ordering and fidelity", criterion_7}},
      {8, {"monitoring under covariate shift", criterion_8}},
      {9, {"feedback loop recall gain", [&] { return criterion_9(cli, work); }}},
      {10, {"CLI determinism", [&] { return criterion_10(cli, work); }}},
  };
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << entry.first << " | " << o.detail
              << " [" << fmt(seconds_since(start), 1) << "s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
