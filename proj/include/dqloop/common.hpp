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

// Shared vocabulary: exception types, calendar helpers, error classes,
// canonical value formatting and hashing.

#include <array>
#include <cmath>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dqloop {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or argument validation failure.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A row or file does not match the feature schema a model/encoder expects.
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

// Serialized payload cannot be parsed.
class CorruptPayload : public Error {
 public:
  using Error::Error;
};

// Serialized payload was written by an incompatible format version.
class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Exception types
// ---------------------------------------------------------------------------

enum class ExceptionType : std::uint8_t {
  AmountOutstanding = 0,
  CouponDate,
  SecurityStatus,
  MaturityDate,
  IssueDate,
  DividendAmount,
  ESAI2010,
};

inline constexpr std::size_t kNumExceptionTypes = 7;

inline constexpr std::array<ExceptionType, kNumExceptionTypes> kAllExceptionTypes{
    ExceptionType::AmountOutstanding, ExceptionType::CouponDate,
    ExceptionType::SecurityStatus,    ExceptionType::MaturityDate,
    ExceptionType::IssueDate,         ExceptionType::DividendAmount,
    ExceptionType::ESAI2010,
};

inline constexpr std::size_t index_of(ExceptionType t) {
  return static_cast<std::size_t>(t);
}

std::string_view to_string(ExceptionType t);
std::optional<ExceptionType> parse_exception_type(std::string_view s);

// Report ordering: type names sorted alphabetically.
std::vector<ExceptionType> alphabetical_types();

// The snapshot field a correction of this type is applied to.
std::string_view primary_field(ExceptionType t);

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

using Date = std::chrono::year_month_day;
using Month = std::chrono::year_month;

Date parse_date(std::string_view s);    // YYYY-MM-DD, throws InvalidArgument
Month parse_month(std::string_view s);  // YYYY-MM, throws InvalidArgument
std::string format_date(Date d);
std::string format_month(Month m);

// Signed day count b - a.
std::int64_t days_between(Date a, Date b);
Date add_days(Date d, std::int64_t days);
// Adds calendar months, clamping the day to the end of the target month.
Date add_months(Date d, int months);
Date month_end(Month m);
Date month_begin(Month m);
// Months since year 0; differences give month distances.
int month_ordinal(Month m);
Month add_months(Month m, int months);

// ---------------------------------------------------------------------------
// Canonical text for numbers (shortest round-trip form)
// ---------------------------------------------------------------------------

std::string format_double(double v);
double parse_double(std::string_view s);  // throws InvalidArgument
std::string format_fixed(double v, int decimals);

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

// splitmix64 step, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Dense row-major matrix
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  void append_row(std::span<const double> values);
  DenseMatrix select_rows(std::span<const std::size_t> rows) const;
  DenseMatrix select_cols(std::span<const std::size_t> cols) const;

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double logistic(double margin) {
  if (margin >= 0) {
    return 1.0 / (1.0 + std::exp(-margin));
  }
  const double e = std::exp(margin);
  return e / (1.0 + e);
}

}  // namespace dqloop
