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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dqloop/datagen.hpp"

using namespace dqloop;
namespace fs = std::filesystem;

namespace {

GenConfig small(std::size_t n = 100, std::size_t months = 12) {
  GenConfig c;
  c.n_instruments = n;
  c.n_months = months;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two-sided 99.9% normal interval for a Binomial(n, p) count.
std::pair<double, double> binomial_interval(double n, double p) {
  const double z = 3.2905;
  const double sd = std::sqrt(n * p * (1 - p));
  return {n * p - z * sd, n * p + z * sd};
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const auto dir = fs::temp_directory_path() / "dqloop_test_datagen";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto c = small(200, 8);
  const auto a = inject_exceptions(generate_universe(c), c);
  const auto b = inject_exceptions(generate_universe(c), c);
  write_corpus_jsonl(a.corpus, dir / "a.jsonl");
  write_corpus_jsonl(b.corpus, dir / "b.jsonl");
  write_truth_jsonl(a.truth, dir / "ta.jsonl");
  write_truth_jsonl(b.truth, dir / "tb.jsonl");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "ta.jsonl") == slurp(dir / "tb.jsonl"));
  CHECK(a.audit_log == b.audit_log);

  c.seed = 2;
  const auto other = generate_universe(c);
  CHECK_FALSE(other.snapshots == a.corpus.snapshots);
}

TEST_CASE("cardinality and month coverage") {
  const auto corpus = generate_universe(small(100, 12));
  CHECK(corpus.snapshots.size() == 1200);
  CHECK(corpus.months().size() == 12);
  std::size_t per_registry = 0;
  for (const auto& r : corpus.registry) per_registry += month_ordinal(r.last_month) - month_ordinal(r.first_month) + 1;
  CHECK(per_registry == corpus.snapshots.size());
}

TEST_CASE("config validation") {
  auto c = small();
  c.n_instruments = 0;
  CHECK_THROWS_AS(generate_universe(c), InvalidArgument);
  c = small(10, 3);
  CHECK_THROWS_AS(generate_universe(c), InvalidArgument);
  c = small();
  c.error_rate[2] = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small();
  c.signal_strength = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("clean corpus satisfies the invariants") {
  const auto corpus = generate_universe(small(2000, 13));
  const auto violations = check_clean_invariants(corpus);
  CHECK(violations.empty());
  if (!violations.empty()) MESSAGE(violations.front());
}

TEST_CASE("zero error rate is a no-op") {
  auto c = small(300, 6);
  c.error_rate.fill(0.0);
  c.planted_rate = 0.0;
  const auto clean = generate_universe(c);
  const auto out = inject_exceptions(clean, c);
  CHECK(out.truth.entries.empty());
  CHECK(out.corpus.snapshots == clean.snapshots);
  for (const auto& r : out.audit_log) CHECK(r.action == AuditAction::confirm);
}

TEST_CASE("corruption count stays inside the binomial interval") {
  // About 10,000 records; one type active at 5%.
  auto c = small(1000, 10);
  c.error_rate.fill(0.0);
  c.error_rate[index_of(ExceptionType::AmountOutstanding)] = 0.05;
  const auto clean = generate_universe(c);
  const double n = static_cast<double>(clean.snapshots.size());
  SUBCASE("uniform noise") {
    c.signal_strength = 0.0;
    const auto out = inject_exceptions(clean, c);
    const auto [lo, hi] = binomial_interval(n, 0.05);
    const double k = static_cast<double>(out.truth.error_count(ExceptionType::AmountOutstanding));
    CHECK(k >= lo);
    CHECK(k <= hi);
  }
  SUBCASE("conditioned signal over eligible records") {
    c.signal_strength = 1.0;
    const auto out = inject_exceptions(clean, c);
    double eligible = 0;
    for (const auto& s : clean.snapshots) {
      auto prev = clean.find(s.instrument_id, add_months(s.ref_month, -1));
      eligible += signal_eligible(s, ExceptionType::AmountOutstanding, prev ? &clean.snapshots[*prev] : nullptr);
    }
    // Per-record probabilities vary (hot countries), so the count is
    // Poisson-binomial; its variance is below the binomial one at the mean rate.
    const auto [lo, hi] = binomial_interval(eligible, 0.05);
    const double k = static_cast<double>(out.truth.error_count(ExceptionType::AmountOutstanding));
    CHECK(k >= lo);
    CHECK(k <= hi);
  }
}

TEST_CASE("audit records agree with the corpus and ground truth") {
  auto c = small(1500, 10);
  c.planted_rate = 0.01;
  const auto out = inject_exceptions(generate_universe(c), c);
  std::size_t corrections = 0;
  for (const auto& r : out.audit_log) {
    const auto idx = out.corpus.find(r.instrument_id, r.ref_month);
    REQUIRE(idx);
    CHECK(get_field(out.corpus.snapshots[*idx], r.field) == r.before);
    if (r.action == AuditAction::correct) {
      ++corrections;
      const auto* e = out.truth.find(r.instrument_id, r.ref_month, r.exception_type);
      REQUIRE(e);
      CHECK(e->clean_value == r.after);
      CHECK(e->corrupted_value == r.before);
      CHECK(e->kind != CorruptionKind::planted);
    } else {
      CHECK(out.truth.find(r.instrument_id, r.ref_month, r.exception_type) == nullptr);
    }
  }
  std::size_t planted = 0;
  for (const auto& e : out.truth.entries) {
    CHECK(e.is_error);
    CHECK(e.corrupted_value != e.clean_value);
    planted += e.kind == CorruptionKind::planted;
  }
  CHECK(planted > 0);
  CHECK(corrections + planted == out.truth.entries.size());
  for (std::size_t i = 1; i < out.audit_log.size(); ++i) CHECK(out.audit_log[i].audit_id == out.audit_log[i - 1].audit_id + 1);
}

TEST_CASE("iDQM share matches the configuration") {
  auto c = small(5000, 13);
  const auto out = inject_exceptions(generate_universe(c), c);
  REQUIRE(out.audit_log.size() >= 10000);
  double idqm = 0;
  for (const auto& r : out.audit_log) idqm += r.source == AuditSource::iDQM;
  CHECK(std::abs(idqm / out.audit_log.size() - c.idqm_share) <= 0.02);
}

TEST_CASE("signal corruptions correlate with the conditioning feature") {
  auto c = small(3000, 8);
  c.signal_strength = 1.0;
  const auto out = inject_exceptions(generate_universe(c), c);
  CHECK(out.truth.conditioning_feature == "country");
  for (auto t : kAllExceptionTypes) {
    const auto& hot = out.truth.hot_values[index_of(t)];
    REQUIRE(hot.size() == 3);
    // Point-biserial correlation between "in hot set" and "has a signal error".
    double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (const auto& s : out.corpus.snapshots) {
      const double x = std::find(hot.begin(), hot.end(), s.country) != hot.end();
      const auto* e = out.truth.find(s.instrument_id, s.ref_month, t);
      const double y = e && e->kind == CorruptionKind::signal;
      n += 1;
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double cov = sxy / n - sx / n * sy / n;
    const double r = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
    CHECK_MESSAGE(r > 0, to_string(t));
  }
  for (const auto& e : out.truth.entries) {
    if (e.kind != CorruptionKind::signal) CHECK_FALSE(e.conditioned);
  }
}

TEST_CASE("serialization round trips") {
  const auto dir = fs::temp_directory_path() / "dqloop_test_datagen_rt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto c = small(120, 6);
  const auto out = inject_exceptions(generate_universe(c), c);
  write_corpus_jsonl(out.corpus, dir / "c.jsonl");
  write_truth_jsonl(out.truth, dir / "t.jsonl");
  const auto corpus = read_corpus_jsonl(dir / "c.jsonl");
  CHECK(corpus.snapshots == out.corpus.snapshots);
  CHECK(corpus.first_month == out.corpus.first_month);
  const auto truth = read_truth_jsonl(dir / "t.jsonl");
  REQUIRE(truth.entries.size() == out.truth.entries.size());
  for (std::size_t i = 0; i < truth.entries.size(); ++i) {
    CHECK(truth.entries[i].clean_value == out.truth.entries[i].clean_value);
    CHECK(truth.entries[i].corrupted_value == out.truth.entries[i].corrupted_value);
  }
  write_corpus_csv(out.corpus, dir / "c.csv");
  std::ifstream in(dir / "c.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == out.corpus.snapshots.size() + 1);

  for (const auto& f : snapshot_fields()) {
    auto s = out.corpus.snapshots.front();
    const auto v = get_field(s, f);
    set_field(s, f, v);
    CHECK(s == out.corpus.snapshots.front());
  }
  CHECK_THROWS_AS(get_field(out.corpus.snapshots.front(), "no_such_field"), InvalidArgument);
}
