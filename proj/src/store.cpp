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

#include "dqloop/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <map>
#include <sstream>
#include <tuple>

namespace dqloop {

std::string_view to_string(AuditSource s) { return s == AuditSource::iDQM ? "iDQM" : "bulk"; }

std::string_view to_string(AuditAction a) {
  return a == AuditAction::correct ? "correct" : "confirm";
}

AuditSource parse_audit_source(std::string_view s) {
  if (s == "iDQM") return AuditSource::iDQM;
  if (s == "bulk") return AuditSource::bulk;
  throw InvalidArgument("unknown audit source: " + std::string(s));
}

AuditAction parse_audit_action(std::string_view s) {
  if (s == "correct") return AuditAction::correct;
  if (s == "confirm") return AuditAction::confirm;
  throw InvalidArgument("unknown audit action: " + std::string(s));
}

void validate(const AuditRecord& r) {
  if (r.instrument_id.empty()) throw InvalidArgument("audit record without instrument_id");
  if (r.field.empty()) throw InvalidArgument("audit record without field");
  if (r.action == AuditAction::correct && r.before == r.after) {
    throw InvalidArgument("correct action requires before != after (field " + r.field + ")");
  }
  if (r.action == AuditAction::confirm && r.before != r.after) {
    throw InvalidArgument("confirm action requires before == after (field " + r.field + ")");
  }
}

nlohmann::json to_json(const AuditRecord& r) {
  return nlohmann::json{
      {"schema_version", kSchemaVersion},
      {"audit_id", r.audit_id},
      {"instrument_id", r.instrument_id},
      {"ref_month", format_month(r.ref_month)},
      {"field", r.field},
      {"before", r.before},
      {"after", r.after},
      {"exception_type", std::string(to_string(r.exception_type))},
      {"source", std::string(to_string(r.source))},
      {"actor", r.actor},
      {"timestamp", r.timestamp},
      {"action", std::string(to_string(r.action))},
  };
}

AuditRecord audit_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) {
      throw VersionMismatch("audit record schema_version " +
                            std::to_string(j.at("schema_version").get<int>()));
    }
    AuditRecord r;
    r.audit_id = j.at("audit_id").get<std::uint64_t>();
    r.instrument_id = j.at("instrument_id").get<std::string>();
    r.ref_month = parse_month(j.at("ref_month").get<std::string>());
    r.field = j.at("field").get<std::string>();
    r.before = j.at("before").get<std::string>();
    r.after = j.at("after").get<std::string>();
    const auto type = parse_exception_type(j.at("exception_type").get<std::string>());
    if (!type) throw InvalidArgument("unknown exception type in audit record");
    r.exception_type = *type;
    r.source = parse_audit_source(j.at("source").get<std::string>());
    r.actor = j.value("actor", "");
    r.timestamp = j.value("timestamp", "");
    r.action = parse_audit_action(j.at("action").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("audit record: ") + e.what());
  }
}

std::string frame_record(const AuditRecord& r) {
  const std::string body = to_json(r).dump();
  return std::to_string(body.size()) + "\t" + body + "\n";
}

namespace {

// Parses framed lines from `data`. Returns the byte offset just past the last
// complete record; a malformed record before the tail is a hard error.
std::size_t parse_frames(const std::string& data, std::vector<AuditRecord>& out) {
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto tab = data.find('\t', pos);
    if (tab == std::string::npos) break;  // torn length prefix
    std::size_t len = 0;
    const auto prefix = std::string_view(data).substr(pos, tab - pos);
    if (prefix.empty() || !std::all_of(prefix.begin(), prefix.end(), ::isdigit)) {
      throw StorageError("corrupt frame prefix at byte " + std::to_string(pos));
    }
    len = std::stoull(std::string(prefix));
    const std::size_t body_start = tab + 1;
    if (body_start + len + 1 > data.size()) break;  // torn body
    if (data[body_start + len] != '\n') {
      throw StorageError("frame length mismatch at byte " + std::to_string(pos));
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(data.substr(body_start, len));
    } catch (const nlohmann::json::exception& e) {
      throw StorageError("corrupt frame body at byte " + std::to_string(pos));
    }
    out.push_back(audit_from_json(j));
    pos = body_start + len + 1;
  }
  return pos;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<AuditRecord> read_framed_file(const std::filesystem::path& path,
                                          std::size_t* torn_bytes) {
  if (!std::filesystem::exists(path)) throw StorageError("missing audit log " + path.string());
  const std::string data = read_all(path);
  std::vector<AuditRecord> out;
  const std::size_t end = parse_frames(data, out);
  if (torn_bytes) *torn_bytes = data.size() - end;
  return out;
}

void write_framed_file(const std::filesystem::path& path, const std::vector<AuditRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  for (const auto& r : records) out << frame_record(r);
  if (!out) throw StorageError("write failed for " + path.string());
}

void export_audit_csv(const std::vector<AuditRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out << "audit_id,instrument_id,ref_month,field,before,after,exception_type,source,actor,"
         "timestamp,action\n";
  for (const auto& r : records) {
    out << r.audit_id << ',' << r.instrument_id << ',' << format_month(r.ref_month) << ','
        << r.field << ',' << r.before << ',' << r.after << ',' << to_string(r.exception_type)
        << ',' << to_string(r.source) << ',' << r.actor << ',' << r.timestamp << ','
        << to_string(r.action) << '\n';
  }
}

AuditStore::AuditStore() = default;

AuditStore::AuditStore(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    const std::string data = read_all(path_);
    const std::size_t end = parse_frames(data, records_);
    recovered_bytes_ = data.size() - end;
    if (recovered_bytes_ > 0) std::filesystem::resize_file(path_, end);
    for (std::size_t i = 1; i < records_.size(); ++i) {
      if (records_[i].audit_id <= records_[i - 1].audit_id) {
        throw StorageError("audit ids out of order in " + path_.string());
      }
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw StorageError("cannot open audit log " + path_.string());
}

void AuditStore::write_line(const AuditRecord& r) {
  if (path_.empty()) return;
  out_ << frame_record(r);
  out_.flush();
  if (!out_) throw StorageError("append failed for " + path_.string());
  // Push the bytes to stable storage before acknowledging the append.
  const int fd = ::open(path_.c_str(), O_WRONLY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::uint64_t AuditStore::append(AuditRecord record) {
  validate(record);
  std::unique_lock lock(mu_);
  record.audit_id = records_.empty() ? 1 : records_.back().audit_id + 1;
  write_line(record);
  records_.push_back(std::move(record));
  return records_.back().audit_id;
}

void AuditStore::import(const std::vector<AuditRecord>& records) {
  std::unique_lock lock(mu_);
  std::uint64_t last = records_.empty() ? 0 : records_.back().audit_id;
  for (const auto& r : records) {
    validate(r);
    if (r.audit_id <= last) throw InvalidArgument("imported audit ids must be increasing");
    last = r.audit_id;
  }
  if (!path_.empty()) {
    for (const auto& r : records) out_ << frame_record(r);
    out_.flush();
    if (!out_) throw StorageError("append failed for " + path_.string());
  }
  records_.insert(records_.end(), records.begin(), records.end());
}

std::vector<AuditRecord> AuditStore::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

std::size_t AuditStore::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::uint64_t AuditStore::last_id() const {
  std::shared_lock lock(mu_);
  return records_.empty() ? 0 : records_.back().audit_id;
}

std::vector<AuditRecord> gold_subset(const std::vector<AuditRecord>& audits) {
  std::vector<AuditRecord> out;
  std::copy_if(audits.begin(), audits.end(), std::back_inserter(out),
               [](const AuditRecord& r) { return r.source == AuditSource::iDQM; });
  return out;
}

std::string row_key(const std::string& instrument_id, Month month) {
  return instrument_id + "@" + format_month(month);
}

const RowLabels* TrainingLabels::find(const std::string& instrument_id, Month month) const {
  const auto it = rows.find(row_key(instrument_id, month));
  return it == rows.end() ? nullptr : &it->second;
}

std::array<std::size_t, kNumExceptionTypes> TrainingLabels::positive_counts() const {
  std::array<std::size_t, kNumExceptionTypes> counts{};
  for (const auto& [key, row] : rows) {
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) counts[t] += row.label[t];
  }
  return counts;
}

TrainingLabels assemble_training(const std::function<bool(const std::string&, Month)>& known_row,
                                 const std::vector<AuditRecord>& audits, Month cutoff,
                                 const AssembleOptions& options) {
  TrainingLabels out;
  out.cutoff = cutoff;

  // Latest action per (instrument, month, type, field) wins.
  using Key = std::tuple<std::string, int, std::size_t, std::string>;
  std::map<Key, const AuditRecord*> latest;
  for (const auto& r : audits) {
    if (month_ordinal(r.ref_month) > month_ordinal(cutoff)) {
      ++out.skipped_future;
      continue;
    }
    if (!known_row(r.instrument_id, r.ref_month)) {
      ++out.skipped_unknown;
      continue;
    }
    if (r.action == AuditAction::confirm && !options.use_confirms) continue;
    Key key{r.instrument_id, month_ordinal(r.ref_month), index_of(r.exception_type), r.field};
    auto& slot = latest[key];
    if (slot == nullptr || slot->audit_id < r.audit_id) slot = &r;
  }

  for (const auto& [key, r] : latest) {
    if (r->action != AuditAction::correct) continue;
    out.rows[row_key(r->instrument_id, r->ref_month)].label[index_of(r->exception_type)] = 1;
  }
  // Provenance follows the records that decided the label.
  for (const auto& [key, r] : latest) {
    auto& row = out.rows[row_key(r->instrument_id, r->ref_month)];
    const std::size_t t = index_of(r->exception_type);
    const bool decides = (r->action == AuditAction::correct) == static_cast<bool>(row.label[t]);
    if (!decides) continue;
    if (r->action == AuditAction::confirm) row.explicit_negative[t] = 1;
    if (r->source == AuditSource::iDQM) row.gold[t] = 1;
  }
  return out;
}

}  // namespace dqloop
