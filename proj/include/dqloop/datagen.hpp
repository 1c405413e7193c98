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

// Synthetic securities master-data corpus with monthly history, plus labeled
// error injection for the seven exception types.
//
// Corruption menus (signal corruptions, learnable from the engineered
// features):
//   AmountOutstanding  x10, x0.1, or transposition of the two leading digits
//                      (when the swap at least doubles or halves the value)
//   CouponDate         stale (a year behind) or beyond maturity
//   SecurityStatus     alive record re-coded 201, 203, or 101 when seasoned
//   MaturityDate       moved before the issue date
//   IssueDate          moved after the reference month
//   DividendAmount     x100 or x0.01 (unit slip)
//   ESAI2010           code inconsistent with instrument kind and term
// Signal corruptions are selected preferentially in a per-type set of "hot"
// countries (the conditioning feature). Noise corruptions select records
// uniformly and leave the observed value statistically indistinguishable from
// clean data: the reported value stays as generated while the ground-truth
// value is a different plausible draw.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dqloop/common.hpp"
#include "dqloop/store.hpp"

namespace dqloop {

enum class InstrumentKind : std::uint8_t { Debt, Equity };

struct InstrumentSnapshot {
  std::string instrument_id;
  Month ref_month{};
  double amount_outstanding = 0.0;
  double market_cap = 0.0;
  double price = 0.0;
  double coupon_rate = 0.0;  // percent
  std::optional<Date> coupon_date;
  double dividend_amount = 0.0;
  Date issue_date{};
  std::optional<Date> maturity_date;
  int security_status = 100;
  std::string esa2010;
  std::string publication_price_type;
  std::string country;
  std::string currency;
  std::string issuer_sector;

  bool operator==(const InstrumentSnapshot&) const = default;
};

// Names of every snapshot attribute addressable by audits and lag features.
const std::vector<std::string>& snapshot_fields();
// Canonical text of a field ("" when absent). Throws InvalidArgument for
// unknown field names.
std::string get_field(const InstrumentSnapshot& s, std::string_view field);
void set_field(InstrumentSnapshot& s, std::string_view field, const std::string& value);

// Alive codes; 201 matured, 203 redeemed early.
inline bool is_alive_status(int status) { return status == 100 || status == 101; }

struct InstrumentStatic {
  std::string instrument_id;
  InstrumentKind kind = InstrumentKind::Debt;
  std::size_t slot = 0;
  Month first_month{};
  Month last_month{};
  int coupon_frequency_months = 0;  // 0 = no coupon
};

struct Corpus {
  Month first_month{};
  std::size_t n_months = 0;
  // Ordered by (ref_month, slot).
  std::vector<InstrumentSnapshot> snapshots;
  std::vector<InstrumentStatic> registry;

  std::vector<Month> months() const;
  // Index of the snapshot for (instrument, month), if present.
  std::optional<std::size_t> find(const std::string& instrument_id, Month month) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

struct GenConfig {
  std::size_t n_instruments = 5000;
  std::size_t n_months = 13;
  std::array<double, kNumExceptionTypes> error_rate{0.03, 0.03, 0.03, 0.03, 0.03, 0.06, 0.03};
  double signal_strength = 1.0;
  std::uint64_t seed = 1;
  Month start_month{std::chrono::year{2020}, std::chrono::month{1}};
  double equity_share = 0.25;
  double short_term_share = 0.10;
  double idqm_share = 0.10;
  // Per clean record, probability of an explicit confirmation audit.
  double confirm_rate = 0.05;
  // Selection weight of hot-country records for signal corruptions.
  double conditioning_weight = 3.0;
  // Stale AmountOutstanding (value repeated from the previous month) that the
  // initial audit log does not cover; used by the feedback-loop demo.
  double planted_rate = 0.0;

  void validate() const;
};

enum class CorruptionKind : std::uint8_t { signal, noise, planted };
std::string_view to_string(CorruptionKind k);

struct GroundTruthEntry {
  std::string instrument_id;
  Month ref_month{};
  ExceptionType type = ExceptionType::AmountOutstanding;
  bool is_error = true;
  std::string corrupted_field;
  std::string clean_value;
  std::string corrupted_value;
  CorruptionKind kind = CorruptionKind::signal;
  // For signal corruptions: whether the record lies in the type's hot set.
  bool conditioned = false;
};

struct GroundTruth {
  std::vector<GroundTruthEntry> entries;
  // Per type: the observable feature that signal corruptions are conditioned
  // on and the hot values of it.
  std::string conditioning_feature = "country";
  std::array<std::vector<std::string>, kNumExceptionTypes> hot_values;

  const GroundTruthEntry* find(const std::string& instrument_id, Month month,
                               ExceptionType type) const;
  std::size_t error_count(ExceptionType type) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

Corpus generate_universe(const GenConfig& config);

struct InjectionResult {
  Corpus corpus;
  GroundTruth truth;
  std::vector<AuditRecord> audit_log;
};

InjectionResult inject_exceptions(const Corpus& corpus, const GenConfig& config);

// Whether a record is eligible for a signal corruption of `type`.
bool signal_eligible(const InstrumentSnapshot& s, ExceptionType type,
                     const InstrumentSnapshot* previous);

// Clean-record invariants; returns human-readable violations.
std::vector<std::string> check_clean_invariants(const Corpus& corpus);

// Serialization (JSON-lines and CSV, schema_version tagged).
nlohmann::json to_json(const InstrumentSnapshot& s);
InstrumentSnapshot snapshot_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroundTruthEntry& e);
GroundTruthEntry truth_from_json(const nlohmann::json& j);

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);
void write_corpus_csv(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus_jsonl(const std::filesystem::path& path);
void write_truth_jsonl(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_truth_jsonl(const std::filesystem::path& path);

}  // namespace dqloop
