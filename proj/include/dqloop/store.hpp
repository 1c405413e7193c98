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

// Append-only audit log: the before/after trace of every confirmation or
// correction, and the assembly of training labels from it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "dqloop/common.hpp"
#include "json.hpp"

namespace dqloop {

enum class AuditSource : std::uint8_t { iDQM, bulk };
enum class AuditAction : std::uint8_t { correct, confirm };

std::string_view to_string(AuditSource s);
std::string_view to_string(AuditAction a);
AuditSource parse_audit_source(std::string_view s);
AuditAction parse_audit_action(std::string_view s);

struct AuditRecord {
  std::uint64_t audit_id = 0;
  std::string instrument_id;
  Month ref_month{};
  std::string field;
  std::string before;  // canonical text; empty = absent
  std::string after;
  ExceptionType exception_type = ExceptionType::AmountOutstanding;
  AuditSource source = AuditSource::bulk;
  std::string actor;
  std::string timestamp;  // ISO-8601
  AuditAction action = AuditAction::correct;

  bool operator==(const AuditRecord&) const = default;
};

// Throws InvalidArgument when the action/value invariant is violated.
void validate(const AuditRecord& r);

nlohmann::json to_json(const AuditRecord& r);
AuditRecord audit_from_json(const nlohmann::json& j);

// Single-writer, many-reader append-only store. Each line on disk is
// "<byte length>\t<json>\n"; a torn final line is discarded on open.
class AuditStore {
 public:
  // In-memory store, nothing persisted.
  AuditStore();
  // Opens (creating if needed) the file at `path` and replays its records.
  explicit AuditStore(std::filesystem::path path);

  AuditStore(const AuditStore&) = delete;
  AuditStore& operator=(const AuditStore&) = delete;

  // Assigns the next id (ignoring record.audit_id), persists and flushes.
  std::uint64_t append(AuditRecord record);

  // Appends records that already carry ids (e.g. a generated initial log);
  // ids must continue the existing sequence.
  void import(const std::vector<AuditRecord>& records);

  std::vector<AuditRecord> records() const;
  std::size_t size() const;
  std::uint64_t last_id() const;
  // Bytes dropped from a torn tail when the file was opened.
  std::size_t recovered_bytes() const noexcept { return recovered_bytes_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write_line(const AuditRecord& r);

  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<AuditRecord> records_;
  std::size_t recovered_bytes_ = 0;
  mutable std::shared_mutex mu_;
};

// Framed line encoding shared by the store and exporters.
std::string frame_record(const AuditRecord& r);
std::vector<AuditRecord> read_framed_file(const std::filesystem::path& path,
                                          std::size_t* torn_bytes = nullptr);
void write_framed_file(const std::filesystem::path& path, const std::vector<AuditRecord>& records);
void export_audit_csv(const std::vector<AuditRecord>& records, const std::filesystem::path& path);

std::vector<AuditRecord> gold_subset(const std::vector<AuditRecord>& audits);

// Per (instrument, month) labels derived from audits.
struct RowLabels {
  std::array<std::uint8_t, kNumExceptionTypes> label{};
  // The winning audit for the type came from the iDQM tool.
  std::array<std::uint8_t, kNumExceptionTypes> gold{};
  std::array<std::uint8_t, kNumExceptionTypes> explicit_negative{};
};

struct TrainingLabels {
  Month cutoff{};
  std::unordered_map<std::string, RowLabels> rows;  // key: row_key()
  std::size_t skipped_unknown = 0;
  std::size_t skipped_future = 0;

  const RowLabels* find(const std::string& instrument_id, Month month) const;
  std::array<std::size_t, kNumExceptionTypes> positive_counts() const;
};

std::string row_key(const std::string& instrument_id, Month month);

struct AssembleOptions {
  bool use_confirms = true;  // confirm actions act as explicit negatives
};

// `known_row` answers whether (instrument, month) exists in the corpus.
TrainingLabels assemble_training(
    const std::function<bool(const std::string&, Month)>& known_row,
    const std::vector<AuditRecord>& audits, Month cutoff, const AssembleOptions& options = {});

}  // namespace dqloop
