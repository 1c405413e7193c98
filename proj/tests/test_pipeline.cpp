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

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dqloop/pipeline.hpp"

using namespace dqloop;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Config config;
  InjectionResult data;
  Month cutoff{};
  FeatureMatrix fm;
  ModelBundle bundle;

  Fixture() {
    config.gen.n_instruments = 700;
    config.gen.n_months = 10;
    config.gen.error_rate.fill(0.06);
    config.train.n_rounds = 40;
    config.train.max_depth = 3;
    data = inject_exceptions(generate_universe(config.gen), config.gen);
    cutoff = add_months(data.corpus.first_month, 9);
    fm = prepare_features(data.corpus, data.audit_log, cutoff, config);
    bundle = train_bundle(fm, config.train, cutoff);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dqloop_test_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("truncation and labels respect the cutoff") {
  const auto& f = fixture();
  const Month mid = add_months(f.data.corpus.first_month, 6);
  const auto cut = truncate_corpus(f.data.corpus, mid);
  for (const auto& s : cut.snapshots) CHECK(month_ordinal(s.ref_month) <= month_ordinal(mid));
  const auto labels = labels_for(cut, f.data.audit_log, mid);
  CHECK(labels.skipped_future > 0);
  for (const auto& [key, row] : labels.rows) CHECK(key.substr(key.find('@') + 1) <= format_month(mid));
}

TEST_CASE("bundle training and meta targets") {
  const auto& f = fixture();
  CHECK(f.bundle.version.rfind("m" + format_month(f.cutoff) + "-", 0) == 0);
  CHECK(f.bundle.version.size() == 1 + 7 + 1 + 12);
  CHECK(f.bundle.base_features == f.fm.base_schema.names());
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    CHECK(f.bundle.models[t].schema_hash == f.fm.schema(kAllExceptionTypes[t]).hash());
    CHECK(f.bundle.models[t].trees.size() >= 1);
  }
  for (std::size_t i = 0; i < f.fm.rows(); i += 13) {
    const auto c = meta_target(f.fm, i);
    std::size_t expected = kNominalClass;
    for (std::size_t t = kNumExceptionTypes; t-- > 0;)
      if (f.fm.labels[t][i]) expected = t;
    CHECK(c == expected);
  }
}

TEST_CASE("retraining on identical data reproduces the version") {
  const auto& f = fixture();
  const auto again = train_bundle(prepare_features(f.data.corpus, f.data.audit_log, f.cutoff, f.config), f.config.train,
                                  f.cutoff);
  CHECK(again.version == f.bundle.version);
  const auto r1 = evaluate_models(f.bundle.pointers(), f.fm, 0.5).to_json();
  const auto r2 = evaluate_models(again.pointers(), f.fm, 0.5).to_json();
  CHECK(r1 == r2);
}

TEST_CASE("bundle files round trip and detect tampering") {
  const auto& f = fixture();
  const auto dir = temp_dir("bundle");
  save_bundle(f.bundle, dir);
  const auto back = load_bundle(dir);
  CHECK(back.version == f.bundle.version);
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) CHECK(serialize(back.models[t]) == serialize(f.bundle.models[t]));

  // Edit one leaf of one model.
  const auto model_path = dir / "model_CouponDate.json";
  auto j = nlohmann::json::parse(std::ifstream(model_path));
  j["base_score"] = j["base_score"].get<double>() + 0.25;
  std::ofstream(model_path) << j.dump();
  CHECK_THROWS_AS(load_bundle(dir), CorruptPayload);
  std::ofstream(dir / "bundle.json") << "{\"format\": ";
  CHECK_THROWS_AS(load_bundle(dir), CorruptPayload);
}

TEST_CASE("registry publish and retire") {
  const auto& f = fixture();
  const auto dir = temp_dir("registry");
  ModelRegistry reg(dir);
  CHECK_FALSE(reg.active());
  reg.publish(f.bundle);
  CHECK(reg.active() == f.bundle.version);

  auto second = f.bundle;
  second.models[0].base_score += 1.0;
  second.version = bundle_version(second);
  reg.publish(second);
  auto third = second;
  third.models[1].base_score += 1.0;
  third.version = bundle_version(third);
  reg.publish(third);

  CHECK(reg.active() == third.version);
  CHECK(reg.contains(f.bundle.version));
  CHECK(reg.superseded_by(f.bundle.version) == third.version);
  CHECK(reg.superseded_by(second.version) == third.version);
  CHECK_FALSE(reg.superseded_by(third.version));
  CHECK(reg.versions().size() == 3);

  ModelRegistry reopened(dir);
  CHECK(reopened.active() == third.version);
  CHECK(reopened.superseded_by(f.bundle.version) == third.version);
  CHECK(reopened.load(second.version).version == second.version);
}

TEST_CASE("monthly scoring matches the rank module") {
  const auto& f = fixture();
  const auto serving = serving_matrix(f.data.corpus, f.bundle);
  const Month last = add_months(f.data.corpus.first_month, 9);
  const auto run = score_month(f.bundle, serving, last);
  REQUIRE(serving.split.size() == serving.rows());
  for (std::size_t i = 0; i < serving.rows(); ++i)
    CHECK((serving.split[i] == SplitTag::train) == (month_ordinal(serving.months[i]) <= month_ordinal(f.cutoff)));
  CHECK(run.run_id == f.bundle.version + "@" + format_month(last));
  CHECK(run.rows.size() == f.config.gen.n_instruments);
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto type = kAllExceptionTypes[t];
    std::vector<Prediction> preds;
    for (auto i : run.rows) {
      const auto row = serving.row_view(type, i);
      preds.push_back({serving.instrument_ids[i], last, type, f.bundle.models[t].predict_proba(row), serving.relevance[i]});
    }
    const auto expected = rank_queue(preds);
    REQUIRE(expected.size() == run.queues[t].size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      CHECK(run.queues[t][k].instrument_id == expected[k].instrument_id);
      CHECK(run.queues[t][k].rank_score == expected[k].rank_score);
    }
  }
  // Serving encodings equal full-train statistics for every row.
  const auto& enc = f.bundle.encoders[0];
  for (std::size_t i = 0; i < serving.rows(); i += 17)
    for (std::size_t j = 0; j < enc.size(); ++j) CHECK(serving.encoded[0](i, j) == enc[j].encode(serving.categories[j][i]));
  CHECK_THROWS_AS(score_month(f.bundle, serving, add_months(last, 5)), InvalidArgument);
}

TEST_CASE("gold NDCG pools") {
  const auto& f = fixture();
  const auto rows = evaluate_ndcg(f.bundle, f.fm, true);
  CHECK(rows.size() == kNumExceptionTypes * kDefaultCutoffs.size());
  for (const auto& r : rows) {
    CHECK(r.ndcg >= 0.0);
    CHECK(r.ndcg <= 1.0);
    if (r.positives == 0) CHECK(r.ndcg == 0.0);
  }
  const auto full = evaluate_ndcg(f.bundle, f.fm, false);
  for (std::size_t k = 0; k < rows.size(); ++k) CHECK(full[k].pool >= rows[k].pool);
}

TEST_CASE("evaluation touches test rows only") {
  const auto& f = fixture();
  const auto rep = evaluate_models(f.bundle.pointers(), f.fm, 0.5);
  const auto test = f.fm.rows_with(SplitTag::test);
  for (const auto& r : rep.full) CHECK(r.pool == test.size());
  for (auto t : kAllExceptionTypes) {
    std::size_t gold = 0;
    for (auto i : test) gold += f.fm.gold(t, i);
    CHECK(rep.find(t, true).pool == gold);
    CHECK(rep.find(t, true).pool <= rep.find(t).pool);
  }
}
