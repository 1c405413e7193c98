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

#include "dqloop/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace dqloop {

double pct_change(double curr, double prev) {
  if (prev == 0.0) {
    if (curr == 0.0) return 0.0;
    return curr > 0 ? kChangeClamp : -kChangeClamp;
  }
  return std::clamp((curr - prev) / std::abs(prev), -kChangeClamp, kChangeClamp);
}

double median_pct_change(double curr, std::span<const double> window) {
  if (window.empty() || window.size() > 3) {
    throw InvalidArgument("median window needs 1 to 3 values");
  }
  std::array<double, 3> v{};
  std::copy(window.begin(), window.end(), v.begin());
  std::sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(window.size()));
  double median = v[0];
  if (window.size() == 2) median = 0.5 * (v[0] + v[1]);
  if (window.size() == 3) median = v[1];
  return pct_change(curr, median);
}

bool lag_changed(const std::optional<std::string>& curr, const std::optional<std::string>& prev) {
  if (!curr && !prev) return false;
  if (!curr || !prev) return true;
  return *curr != *prev;
}

std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::numeric: return "numeric";
    case FeatureKind::boolean: return "boolean";
    case FeatureKind::encoded: return "encoded";
  }
  return "numeric";
}

std::string_view to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
  }
  return "train";
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(f.name);
  return out;
}

std::string FeatureSchema::hash() const {
  std::string text;
  for (const auto& f : features) {
    text += f.name;
    text += '|';
    text += to_string(f.kind);
    text += '|';
    text += f.transform;
    text += '\n';
  }
  return sha256_hex(text);
}

// ---------------------------------------------------------------------------
// Target encoder
// ---------------------------------------------------------------------------

TargetEncoder TargetEncoder::fit(const std::vector<std::string>& categories,
                                 const std::vector<std::uint8_t>& labels, double m, int k_folds,
                                 const std::vector<int>& folds, std::optional<double> prior) {
  if (categories.empty()) throw InvalidArgument("target encoder: empty input");
  if (categories.size() != labels.size() || categories.size() != folds.size()) {
    throw InvalidArgument("target encoder: input lengths differ");
  }
  if (!(m > 0)) throw InvalidArgument("target encoder: smoothing mass must be positive");
  if (k_folds < 1) throw InvalidArgument("target encoder: k_folds must be >= 1");
  TargetEncoder enc;
  enc.m_ = m;
  enc.k_ = k_folds;
  enc.per_fold_.resize(static_cast<std::size_t>(k_folds));
  enc.fold_totals_.resize(static_cast<std::size_t>(k_folds));
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (labels[i] > 1) throw InvalidArgument("target encoder: labels must be 0/1");
    if (folds[i] < 0 || folds[i] >= k_folds) throw InvalidArgument("target encoder: bad fold id");
    const double y = labels[i];
    auto& t = enc.total_[categories[i]];
    t.count += 1;
    t.positives += y;
    auto& f = enc.per_fold_[static_cast<std::size_t>(folds[i])][categories[i]];
    f.count += 1;
    f.positives += y;
    auto& ft = enc.fold_totals_[static_cast<std::size_t>(folds[i])];
    ft.count += 1;
    ft.positives += y;
    enc.all_.count += 1;
    enc.all_.positives += y;
  }
  enc.prior_ = prior ? *prior : enc.all_.positives / enc.all_.count;
  return enc;
}

double TargetEncoder::encode(const std::string& category) const {
  const auto it = total_.find(category);
  if (it == total_.end()) return prior_;
  return (it->second.positives + m_ * prior_) / (it->second.count + m_);
}

double TargetEncoder::encode_oof(const std::string& category, int fold) const {
  if (fold < 0 || fold >= k_) throw InvalidArgument("target encoder: bad fold id");
  const auto f = static_cast<std::size_t>(fold);
  const double rest_count = all_.count - fold_totals_[f].count;
  const double prior =
      rest_count > 0 ? (all_.positives - fold_totals_[f].positives) / rest_count : prior_;
  const auto it = total_.find(category);
  if (it == total_.end()) return prior;
  double count = it->second.count;
  double positives = it->second.positives;
  const auto fit = per_fold_[f].find(category);
  if (fit != per_fold_[f].end()) {
    count -= fit->second.count;
    positives -= fit->second.positives;
  }
  return (positives + m_ * prior) / (count + m_);
}

nlohmann::json TargetEncoder::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [c, s] : total_) cats[c] = {s.count, s.positives};
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t f = 0; f < per_fold_.size(); ++f) {
    nlohmann::json fc = nlohmann::json::object();
    for (const auto& [c, s] : per_fold_[f]) fc[c] = {s.count, s.positives};
    folds.push_back({{"total", {fold_totals_[f].count, fold_totals_[f].positives}},
                     {"categories", fc}});
  }
  return {{"smoothing", m_},
          {"k_folds", k_},
          {"prior", prior_},
          {"total", {all_.count, all_.positives}},
          {"categories", cats},
          {"folds", folds}};
}

TargetEncoder TargetEncoder::from_json(const nlohmann::json& j) {
  try {
    TargetEncoder enc;
    enc.m_ = j.at("smoothing").get<double>();
    enc.k_ = j.at("k_folds").get<int>();
    enc.prior_ = j.at("prior").get<double>();
    enc.all_ = {j.at("total")[0].get<double>(), j.at("total")[1].get<double>()};
    for (const auto& [c, s] : j.at("categories").items()) {
      enc.total_[c] = {s[0].get<double>(), s[1].get<double>()};
    }
    for (const auto& f : j.at("folds")) {
      enc.fold_totals_.push_back({f.at("total")[0].get<double>(), f.at("total")[1].get<double>()});
      auto& m = enc.per_fold_.emplace_back();
      for (const auto& [c, s] : f.at("categories").items()) {
        m[c] = {s[0].get<double>(), s[1].get<double>()};
      }
    }
    return enc;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("target encoder: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Base features
// ---------------------------------------------------------------------------

const std::vector<std::string>& encoded_columns() {
  static const std::vector<std::string> kColumns{"country",        "currency",
                                                 "issuer_sector",  "esa2010",
                                                 "publication_price_type", "security_status"};
  return kColumns;
}

namespace {

const std::vector<std::string>& change_fields() {
  static const std::vector<std::string> kFields{"amount_outstanding", "market_cap", "price",
                                                "coupon_rate", "dividend_amount"};
  return kFields;
}

double numeric_field(const InstrumentSnapshot& s, std::size_t k) {
  switch (k) {
    case 0: return s.amount_outstanding;
    case 1: return s.market_cap;
    case 2: return s.price;
    case 3: return s.coupon_rate;
    default: return s.dividend_amount;
  }
}

struct OneHot {
  std::string column;
  std::vector<std::string> values;  // plus an implicit "other"
};

const std::vector<OneHot>& one_hots() {
  static const std::vector<OneHot> kOneHots{
      {"security_status", {"100", "101", "201", "203"}},
      {"esa2010", {"F_31", "F_32", "F_511"}},
      {"publication_price_type", {"CLC", "PAY", "MKT"}},
  };
  return kOneHots;
}

FeatureSchema make_base_schema() {
  FeatureSchema schema;
  auto add = [&](std::string name, FeatureKind kind, std::string source, std::string transform) {
    schema.features.push_back({std::move(name), kind, std::move(source), std::move(transform), ""});
  };
  for (const auto& f : change_fields()) {
    add("pct_" + f, FeatureKind::numeric, f, "pct");
    add("pct_" + f + "__missing", FeatureKind::boolean, f, "flag");
    add("pct_" + f + "__prev_zero", FeatureKind::boolean, f, "flag");
    add("med3_" + f, FeatureKind::numeric, f, "med3");
    add("med3_" + f + "__missing", FeatureKind::boolean, f, "flag");
    add("med3_" + f + "__prev_zero", FeatureKind::boolean, f, "flag");
  }
  for (const auto& f : {"amount_outstanding", "market_cap", "price", "dividend_amount"}) {
    add(std::string("log_") + f, FeatureKind::numeric, f, "level");
  }
  add("level_coupon_rate", FeatureKind::numeric, "coupon_rate", "level");
  add("dividend_yield", FeatureKind::numeric, "dividend_amount", "level");
  for (const auto& f : snapshot_fields()) add("lag_" + f, FeatureKind::boolean, f, "lag");
  add("days_since_issue", FeatureKind::numeric, "issue_date", "days");
  add("days_to_maturity", FeatureKind::numeric, "maturity_date", "days");
  add("days_to_maturity__missing", FeatureKind::boolean, "maturity_date", "flag");
  add("term_days", FeatureKind::numeric, "maturity_date", "days");
  add("term_days__missing", FeatureKind::boolean, "maturity_date", "flag");
  add("days_to_coupon", FeatureKind::numeric, "coupon_date", "days");
  add("days_to_coupon__missing", FeatureKind::boolean, "coupon_date", "flag");
  add("days_coupon_to_maturity", FeatureKind::numeric, "coupon_date", "days");
  add("days_coupon_to_maturity__missing", FeatureKind::boolean, "coupon_date", "flag");
  add("history_months", FeatureKind::numeric, "ref_month", "count");
  for (const auto& oh : one_hots()) {
    for (const auto& v : oh.values) add(oh.column + "=" + v, FeatureKind::boolean, oh.column, "onehot");
    add(oh.column + "=other", FeatureKind::boolean, oh.column, "onehot");
  }
  return schema;
}

std::optional<std::string> field_or_absent(const InstrumentSnapshot* s, const std::string& field) {
  if (s == nullptr) return std::nullopt;
  std::string v = get_field(*s, field);
  if (v.empty()) return std::nullopt;
  return v;
}

void fill_row(const Corpus& corpus, std::size_t index, std::vector<double>& out) {
  const auto& s = corpus.snapshots[index];
  out.clear();
  std::array<const InstrumentSnapshot*, 3> prev{};
  for (int k = 1; k <= 3; ++k) {
    if (auto p = corpus.find(s.instrument_id, add_months(s.ref_month, -k))) {
      prev[static_cast<std::size_t>(k - 1)] = &corpus.snapshots[*p];
    }
  }
  auto b = [](bool v) { return v ? 1.0 : 0.0; };

  for (std::size_t k = 0; k < change_fields().size(); ++k) {
    const double curr = numeric_field(s, k);
    if (prev[0]) {
      const double p = numeric_field(*prev[0], k);
      out.push_back(pct_change(curr, p));
      out.push_back(0.0);
      out.push_back(b(p == 0.0 && curr != 0.0));
    } else {
      out.insert(out.end(), {0.0, 1.0, 0.0});
    }
    std::array<double, 3> window{};
    std::size_t n = 0;
    for (const auto* p : prev) {
      if (p) window[n++] = numeric_field(*p, k);
    }
    if (n > 0) {
      std::array<double, 3> sorted = window;
      std::sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n));
      const double median = n == 1 ? sorted[0] : n == 2 ? 0.5 * (sorted[0] + sorted[1]) : sorted[1];
      out.push_back(median_pct_change(curr, std::span<const double>(window.data(), n)));
      out.push_back(0.0);
      out.push_back(b(median == 0.0 && curr != 0.0));
    } else {
      out.insert(out.end(), {0.0, 1.0, 0.0});
    }
  }
  out.push_back(std::log1p(s.amount_outstanding));
  out.push_back(std::log1p(s.market_cap));
  out.push_back(std::log1p(s.price));
  out.push_back(std::log1p(s.dividend_amount));
  out.push_back(s.coupon_rate);
  out.push_back(s.price > 0 ? s.dividend_amount / s.price : 0.0);

  for (const auto& f : snapshot_fields()) {
    out.push_back(b(lag_changed(field_or_absent(&s, f), field_or_absent(prev[0], f))));
  }

  const Date end = month_end(s.ref_month);
  auto days = [&](std::optional<Date> a, std::optional<Date> z) {
    if (!a || !z) {
      out.insert(out.end(), {0.0, 1.0});
    } else {
      out.push_back(static_cast<double>(days_between(*a, *z)));
      out.push_back(0.0);
    }
  };
  out.push_back(static_cast<double>(days_between(s.issue_date, end)));
  days(end, s.maturity_date);
  days(s.issue_date, s.maturity_date);
  days(end, s.coupon_date);
  days(s.coupon_date, s.maturity_date);

  int history = 0;
  for (int k = 1;; ++k) {
    if (!corpus.find(s.instrument_id, add_months(s.ref_month, -k))) break;
    ++history;
  }
  out.push_back(history);

  for (const auto& oh : one_hots()) {
    const std::string v = get_field(s, oh.column);
    bool matched = false;
    for (const auto& candidate : oh.values) {
      out.push_back(b(v == candidate));
      matched = matched || v == candidate;
    }
    out.push_back(b(!matched));
  }
}

}  // namespace

FeatureMatrix build_matrix(const Corpus& corpus) {
  if (corpus.n_months < 4) throw InvalidArgument("feature engineering needs at least 4 months");
  FeatureMatrix fm;
  fm.base_schema = make_base_schema();
  const int first = month_ordinal(corpus.first_month) + 3;
  std::size_t n = 0;
  for (const auto& s : corpus.snapshots) n += month_ordinal(s.ref_month) >= first;
  fm.base = DenseMatrix(n, fm.base_schema.size());
  fm.categories.assign(encoded_columns().size(), {});
  for (auto& c : fm.categories) c.reserve(n);
  fm.instrument_ids.reserve(n);
  fm.months.reserve(n);
  fm.relevance.reserve(n);

  std::vector<double> row;
  std::size_t r = 0;
  for (std::size_t i = 0; i < corpus.snapshots.size(); ++i) {
    const auto& s = corpus.snapshots[i];
    if (month_ordinal(s.ref_month) < first) continue;
    fill_row(corpus, i, row);
    if (row.size() != fm.base_schema.size()) {
      throw SchemaMismatch("feature row width " + std::to_string(row.size()) +
                           " != schema length " + std::to_string(fm.base_schema.size()));
    }
    std::copy(row.begin(), row.end(), fm.base.row(r).begin());
    fm.instrument_ids.push_back(s.instrument_id);
    fm.months.push_back(s.ref_month);
    fm.relevance.push_back(s.amount_outstanding > 0 ? s.amount_outstanding : s.market_cap);
    for (std::size_t c = 0; c < encoded_columns().size(); ++c) {
      fm.categories[c].push_back(get_field(s, encoded_columns()[c]));
    }
    ++r;
  }
  for (auto& l : fm.labels) l.assign(n, 0);
  for (auto& g : fm.label_gold) g.assign(n, 0);
  fm.split.assign(n, SplitTag::train);
  return fm;
}

void attach_labels(FeatureMatrix& fm, const TrainingLabels& labels) {
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    const RowLabels* row = labels.find(fm.instrument_ids[i], fm.months[i]);
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
      fm.labels[t][i] = row ? row->label[t] : 0;
      fm.label_gold[t][i] = row ? row->gold[t] : 0;
    }
  }
}

void attach_labels(FeatureMatrix& fm, const GroundTruth& truth) {
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
      const auto* e = truth.find(fm.instrument_ids[i], fm.months[i], kAllExceptionTypes[t]);
      fm.labels[t][i] = e != nullptr && e->is_error;
      fm.label_gold[t][i] = 0;
    }
  }
}

SplitBoundaries choose_split(const std::vector<std::pair<Month, std::size_t>>& month_counts,
                             const std::array<double, 3>& ratios) {
  auto sorted = month_counts;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return month_ordinal(a.first) < month_ordinal(b.first);
  });
  const std::size_t k = sorted.size();
  if (k < 3) throw InvalidArgument("temporal split needs at least 3 distinct months");
  double total = 0;
  for (const auto& [m, c] : sorted) total += static_cast<double>(c);
  if (total <= 0) throw InvalidArgument("temporal split over an empty matrix");
  std::vector<double> prefix(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) prefix[i + 1] = prefix[i] + static_cast<double>(sorted[i].second);

  double best = std::numeric_limits<double>::infinity();
  SplitBoundaries out;
  // Train = months [0, a), validation = [a, b), test = [b, k).
  for (std::size_t a = 1; a + 2 <= k; ++a) {
    for (std::size_t b = a + 1; b + 1 <= k; ++b) {
      const double p0 = prefix[a] / total;
      const double p1 = (prefix[b] - prefix[a]) / total;
      const double p2 = (total - prefix[b]) / total;
      const double d = std::abs(p0 - ratios[0]) + std::abs(p1 - ratios[1]) + std::abs(p2 - ratios[2]);
      if (d < best - 1e-12) {
        best = d;
        out.last_train = sorted[a - 1].first;
        out.last_validation = sorted[b - 1].first;
      }
    }
  }
  return out;
}

void apply_split(FeatureMatrix& fm, const SplitBoundaries& b) {
  const int t = month_ordinal(b.last_train);
  const int v = month_ordinal(b.last_validation);
  fm.split.resize(fm.rows());
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    const int m = month_ordinal(fm.months[i]);
    fm.split[i] = m <= t ? SplitTag::train : m <= v ? SplitTag::validation : SplitTag::test;
  }
}

void temporal_split(FeatureMatrix& fm, const std::array<double, 3>& ratios) {
  std::map<int, std::pair<Month, std::size_t>> counts;
  for (const auto& m : fm.months) {
    auto& c = counts[month_ordinal(m)];
    c.first = m;
    ++c.second;
  }
  std::vector<std::pair<Month, std::size_t>> month_counts;
  for (const auto& [ord, c] : counts) month_counts.push_back(c);
  apply_split(fm, choose_split(month_counts, ratios));
}

std::vector<int> assign_folds(const std::vector<std::string>& instrument_ids, int k,
                              std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("k_folds must be >= 1");
  std::vector<int> out;
  out.reserve(instrument_ids.size());
  for (const auto& id : instrument_ids) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : id) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    out.push_back(static_cast<int>(mix_seed(seed, h) % static_cast<std::uint64_t>(k)));
  }
  return out;
}

void fit_encoders(FeatureMatrix& fm, const FeatureConfig& config) {
  const auto train = fm.rows_with(SplitTag::train);
  if (train.empty()) throw InvalidArgument("no train rows to fit encoders on");
  fm.folds = assign_folds(fm.instrument_ids, config.k_folds, config.seed);
  std::vector<int> train_folds;
  for (auto i : train) train_folds.push_back(fm.folds[i]);
  const std::size_t nc = encoded_columns().size();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    fm.encoders[t].clear();
    fm.encoded[t] = DenseMatrix(fm.rows(), nc);
    std::vector<std::uint8_t> y;
    y.reserve(train.size());
    for (auto i : train) y.push_back(fm.labels[t][i]);
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<std::string> cats;
      cats.reserve(train.size());
      for (auto i : train) cats.push_back(fm.categories[c][i]);
      auto enc = TargetEncoder::fit(cats, y, config.smoothing, config.k_folds, train_folds);
      for (std::size_t i = 0; i < fm.rows(); ++i) {
        fm.encoded[t](i, c) = fm.split[i] == SplitTag::train
                                  ? enc.encode_oof(fm.categories[c][i], fm.folds[i])
                                  : enc.encode(fm.categories[c][i]);
      }
      fm.encoders[t].push_back(std::move(enc));
    }
  }
}

void apply_encoders(FeatureMatrix& fm,
                    const std::array<std::vector<TargetEncoder>, kNumExceptionTypes>& encoders) {
  const std::size_t nc = encoded_columns().size();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    if (encoders[t].size() != nc) throw SchemaMismatch("encoder set has the wrong width");
    fm.encoders[t] = encoders[t];
    fm.encoded[t] = DenseMatrix(fm.rows(), nc);
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t i = 0; i < fm.rows(); ++i) fm.encoded[t](i, c) = encoders[t][c].encode(fm.categories[c][i]);
    }
  }
}

FeatureMatrix featurize(const Corpus& corpus, const TrainingLabels& labels,
                        const FeatureConfig& config) {
  FeatureMatrix fm = build_matrix(corpus);
  attach_labels(fm, labels);
  temporal_split(fm, config.split_ratios);
  fit_encoders(fm, config);
  return fm;
}

FeatureSchema FeatureMatrix::schema(ExceptionType type) const {
  FeatureSchema s = base_schema;
  const std::string tname(to_string(type));
  for (const auto& c : encoded_columns()) {
    s.features.push_back({"enc_" + c + "__" + tname, FeatureKind::encoded, c, "target",
                          "te:" + c + ":" + tname});
  }
  return s;
}

std::vector<double> FeatureMatrix::row_view(ExceptionType type, std::size_t row) const {
  if (!encoded_ready()) throw InvalidArgument("encoders not fitted");
  std::vector<double> out(base.row(row).begin(), base.row(row).end());
  const auto enc = encoded[index_of(type)].row(row);
  out.insert(out.end(), enc.begin(), enc.end());
  return out;
}

DenseMatrix FeatureMatrix::view(ExceptionType type, std::span<const std::size_t> rows) const {
  if (!encoded_ready()) throw InvalidArgument("encoders not fitted");
  const auto& enc = encoded[index_of(type)];
  const std::size_t pb = base.cols();
  DenseMatrix out(rows.size(), pb + enc.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto dst = out.row(i);
    const auto b = base.row(rows[i]);
    const auto e = enc.row(rows[i]);
    std::copy(b.begin(), b.end(), dst.begin());
    std::copy(e.begin(), e.end(), dst.begin() + static_cast<std::ptrdiff_t>(pb));
  }
  return out;
}

DenseMatrix FeatureMatrix::view(ExceptionType type) const {
  std::vector<std::size_t> all(rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return view(type, all);
}

std::vector<std::size_t> FeatureMatrix::rows_with(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == tag) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FeatureMatrix::rows_in_month(Month m) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < months.size(); ++i) {
    if (months[i] == m) out.push_back(i);
  }
  return out;
}

std::optional<std::size_t> FeatureMatrix::find(const std::string& instrument_id, Month month) const {
  for (std::size_t i = 0; i < rows(); ++i) {
    if (months[i] == month && instrument_ids[i] == instrument_id) return i;
  }
  return std::nullopt;
}

void write_matrix_csv(const FeatureMatrix& fm, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out << "instrument_id,ref_month,split";
  for (const auto& f : fm.base_schema.features) out << ',' << f.name;
  if (fm.encoded_ready()) {
    for (auto t : kAllExceptionTypes) {
      for (const auto& c : encoded_columns()) out << ",enc_" << c << "__" << to_string(t);
    }
  }
  for (auto t : kAllExceptionTypes) out << ",label_" << to_string(t);
  for (auto t : kAllExceptionTypes) out << ",gold_" << to_string(t);
  out << '\n';
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    out << fm.instrument_ids[i] << ',' << format_month(fm.months[i]) << ','
        << to_string(fm.split[i]);
    for (double v : fm.base.row(i)) out << ',' << format_double(v);
    if (fm.encoded_ready()) {
      for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
        for (double v : fm.encoded[t].row(i)) out << ',' << format_double(v);
      }
    }
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) out << ',' << int(fm.labels[t][i]);
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) out << ',' << int(fm.gold(kAllExceptionTypes[t], i));
    out << '\n';
  }
}

nlohmann::json schema_json(const FeatureMatrix& fm, const FeatureConfig& config) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : fm.base_schema.features) {
    features.push_back({{"name", f.name},
                        {"kind", std::string(to_string(f.kind))},
                        {"source", f.source},
                        {"transform", f.transform}});
  }
  nlohmann::json encoders = nlohmann::json::object();
  if (fm.encoded_ready()) {
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
      nlohmann::json per = nlohmann::json::object();
      for (std::size_t c = 0; c < encoded_columns().size(); ++c) {
        per[encoded_columns()[c]] = fm.encoders[t][c].to_json();
      }
      encoders[std::string(to_string(kAllExceptionTypes[t]))] = per;
    }
  }
  return {{"schema_version", kSchemaVersion},
          {"base_features", features},
          {"base_schema_hash", fm.base_schema.hash()},
          {"encoded_columns", encoded_columns()},
          {"smoothing", config.smoothing},
          {"k_folds", config.k_folds},
          {"seed", config.seed},
          {"split_ratios", config.split_ratios},
          {"encoders", encoders}};
}

}  // namespace dqloop
