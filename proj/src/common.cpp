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

#include "dqloop/common.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dqloop {

namespace {

constexpr std::array<std::string_view, kNumExceptionTypes> kTypeNames{
    "AmountOutstanding", "CouponDate", "SecurityStatus", "MaturityDate",
    "IssueDate",         "DividendAmount", "ESAI2010",
};

constexpr std::array<std::string_view, kNumExceptionTypes> kPrimaryFields{
    "amount_outstanding", "coupon_date", "security_status", "maturity_date",
    "issue_date",         "dividend_amount", "esa2010",
};

int parse_int(std::string_view s, std::string_view what) {
  int value = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("malformed " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(ExceptionType t) { return kTypeNames[index_of(t)]; }

std::optional<ExceptionType> parse_exception_type(std::string_view s) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == s) return static_cast<ExceptionType>(i);
  }
  return std::nullopt;
}

std::vector<ExceptionType> alphabetical_types() {
  std::vector<ExceptionType> out(kAllExceptionTypes.begin(), kAllExceptionTypes.end());
  std::sort(out.begin(), out.end(),
            [](ExceptionType a, ExceptionType b) { return to_string(a) < to_string(b); });
  return out;
}

std::string_view primary_field(ExceptionType t) { return kPrimaryFields[index_of(t)]; }

Date parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
    throw InvalidArgument("malformed date: '" + std::string(s) + "'");
  }
  const int y = parse_int(s.substr(0, 4), "date");
  const int m = parse_int(s.substr(5, 2), "date");
  const int d = parse_int(s.substr(8, 2), "date");
  Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
            std::chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok()) throw InvalidArgument("invalid calendar date: '" + std::string(s) + "'");
  return date;
}

Month parse_month(std::string_view s) {
  if (s.size() != 7 || s[4] != '-') {
    throw InvalidArgument("malformed month: '" + std::string(s) + "'");
  }
  const int y = parse_int(s.substr(0, 4), "month");
  const int m = parse_int(s.substr(5, 2), "month");
  Month month{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)}};
  if (!month.ok()) throw InvalidArgument("invalid month: '" + std::string(s) + "'");
  return month;
}

std::string format_date(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

std::string format_month(Month m) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u", static_cast<int>(m.year()),
                static_cast<unsigned>(m.month()));
  return buf;
}

std::int64_t days_between(Date a, Date b) {
  return (std::chrono::sys_days{b} - std::chrono::sys_days{a}).count();
}

Date add_days(Date d, std::int64_t days) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

Date add_months(Date d, int months) {
  const Month target = add_months(Month{d.year(), d.month()}, months);
  const Date last = month_end(target);
  const auto day = std::min(static_cast<unsigned>(d.day()), static_cast<unsigned>(last.day()));
  return Date{target.year(), target.month(), std::chrono::day{day}};
}

Date month_end(Month m) { return Date{m / std::chrono::last}; }

Date month_begin(Month m) { return Date{m.year(), m.month(), std::chrono::day{1}}; }

int month_ordinal(Month m) {
  return static_cast<int>(m.year()) * 12 + static_cast<int>(static_cast<unsigned>(m.month())) - 1;
}

Month add_months(Month m, int months) { return m + std::chrono::months{months}; }

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("malformed number: '" + std::string(s) + "'");
  }
  return value;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void DenseMatrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw InvalidArgument("row width " + std::to_string(values.size()) + " != " +
                          std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

DenseMatrix DenseMatrix::select_rows(std::span<const std::size_t> rows) const {
  DenseMatrix out(rows.size(), cols_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
  }
  return out;
}

DenseMatrix DenseMatrix::select_cols(std::span<const std::size_t> cols) const {
  DenseMatrix out(rows_, cols.size());
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = (*this)(i, cols[j]);
  }
  return out;
}

}  // namespace dqloop
