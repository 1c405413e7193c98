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

#include "dqloop/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dqloop {

namespace {

using Rng = std::mt19937_64;

// Random-stream ids for mix_seed.
enum Stream : std::uint64_t {
  kUniverse = 1,
  kSelection = 10,  // + type index
  kMorphology = 20,
  kAudit = 30,
  kHot = 40,  // + type index
  kPlanted = 50,
  kConfirm = 60,
};

struct Choice {
  std::string_view value;
  double weight;
};

constexpr std::array<Choice, 12> kCountries{{{"DE", 0.20}, {"FR", 0.18}, {"IT", 0.15},
                                             {"ES", 0.10}, {"NL", 0.08}, {"BE", 0.05},
                                             {"AT", 0.04}, {"IE", 0.05}, {"LU", 0.07},
                                             {"FI", 0.03}, {"PT", 0.03}, {"SE", 0.02}}};
constexpr std::array<Choice, 5> kDebtSectors{
    {{"S13", 0.25}, {"S122", 0.35}, {"S11", 0.25}, {"S125", 0.05}, {"S127", 0.10}}};
constexpr std::array<Choice, 3> kEquitySectors{{{"S11", 0.70}, {"S122", 0.20}, {"S125", 0.10}}};
constexpr std::array<Choice, 3> kDebtPriceTypes{{{"CLC", 0.5}, {"PAY", 0.2}, {"MKT", 0.3}}};
constexpr std::array<Choice, 2> kEquityPriceTypes{{{"MKT", 0.8}, {"PAY", 0.2}}};

template <std::size_t N>
std::string pick(const std::array<Choice, N>& choices, Rng& rng) {
  double total = 0;
  for (const auto& c : choices) total += c.weight;
  std::uniform_real_distribution<double> u(0.0, total);
  double x = u(rng);
  for (const auto& c : choices) {
    if (x < c.weight) return std::string(c.value);
    x -= c.weight;
  }
  return std::string(choices.back().value);
}

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
double normal(Rng& rng, double mu, double sigma) {
  return std::normal_distribution<double>(mu, sigma)(rng);
}
std::int64_t uniform_int(Rng& rng, std::int64_t a, std::int64_t b) {
  return std::uniform_int_distribution<std::int64_t>(a, b)(rng);
}
bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

double round_to(double v, double step) { return std::round(v / step) * step; }

std::string currency_for(const std::string& country, Rng& rng) {
  const double u = uniform(rng, 0, 1);
  if (country == "SE" && u < 0.7) return "SEK";
  if ((country == "LU" || country == "IE") && u < 0.25) return u < 0.17 ? "USD" : "GBP";
  if (u > 0.96) return "USD";
  return "EUR";
}

// Dynamic state of the instrument occupying one slot.
struct Live {
  InstrumentStatic info;
  InstrumentSnapshot snap;
  double shares = 0.0;
  bool short_term = false;
  std::optional<Date> first_coupon;  // schedule anchor
};

std::optional<Date> next_coupon(const Live& live, Month month) {
  if (live.info.coupon_frequency_months == 0 || !live.snap.maturity_date) return std::nullopt;
  const Date end = month_end(month);
  const Date maturity = *live.snap.maturity_date;
  if (days_between(end, maturity) <= 0) return maturity;
  for (int k = 1;; ++k) {
    const Date d = add_months(live.snap.issue_date, k * live.info.coupon_frequency_months);
    if (days_between(end, d) > 0) return days_between(d, maturity) < 0 ? maturity : d;
  }
}

class UniverseBuilder {
 public:
  explicit UniverseBuilder(const GenConfig& config)
      : config_(config), rng_(mix_seed(config.seed, kUniverse)) {}

  Corpus build() {
    Corpus corpus;
    corpus.first_month = config_.start_month;
    corpus.n_months = config_.n_months;
    corpus.snapshots.reserve(config_.n_instruments * config_.n_months);

    std::vector<Live> slots(config_.n_instruments);
    for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = new_instrument(s, 0, true);

    for (std::size_t m = 0; m < config_.n_months; ++m) {
      const Month month = add_months(config_.start_month, static_cast<int>(m));
      for (std::size_t s = 0; s < slots.size(); ++s) {
        Live& live = slots[s];
        if (live.info.first_month != month) evolve(live, month);
        live.snap.ref_month = month;
        live.snap.coupon_date = next_coupon(live, month);
        bool ends = false;
        if (live.snap.maturity_date && days_between(month_end(month), *live.snap.maturity_date) <= 0) {
          live.snap.security_status = 201;
          ends = true;
        } else if (live.info.first_month != month &&
                   bernoulli(rng_, live.info.kind == InstrumentKind::Debt ? 0.001 : 0.0005)) {
          live.snap.security_status = 203;
          ends = true;
        } else {
          live.snap.security_status = live.info.first_month == month ? 101 : 100;
        }
        corpus.snapshots.push_back(live.snap);
        if (ends) {
          live.info.last_month = month;
          corpus.registry.push_back(live.info);
          live = new_instrument(s, m + 1, false);
        }
      }
    }
    const Month last = add_months(config_.start_month, static_cast<int>(config_.n_months) - 1);
    for (auto& live : slots) {
      if (live.info.first_month <= last) {
        live.info.last_month = last;
        corpus.registry.push_back(live.info);
      }
    }
    std::sort(corpus.registry.begin(), corpus.registry.end(),
              [](const auto& a, const auto& b) { return a.instrument_id < b.instrument_id; });
    corpus.rebuild_index();
    return corpus;
  }

 private:
  Live new_instrument(std::size_t slot, std::size_t month_index, bool seasoned) {
    Live live;
    const Month month = add_months(config_.start_month, static_cast<int>(month_index));
    live.info.slot = slot;
    live.info.first_month = month;
    live.info.kind =
        bernoulli(rng_, config_.equity_share) ? InstrumentKind::Equity : InstrumentKind::Debt;
    auto& s = live.snap;
    s.country = pick(kCountries, rng_);
    s.currency = currency_for(s.country, rng_);
    char id[32];
    std::snprintf(id, sizeof id, "%s%010llu", s.country.c_str(),
                  static_cast<unsigned long long>(next_id_++));
    s.instrument_id = id;
    live.info.instrument_id = id;

    const Date begin = month_begin(month);
    const Date end = month_end(month);
    if (live.info.kind == InstrumentKind::Debt) {
      live.short_term = bernoulli(rng_, config_.short_term_share);
      s.issuer_sector = pick(kDebtSectors, rng_);
      s.publication_price_type = pick(kDebtPriceTypes, rng_);
      for (;;) {
        s.issue_date = seasoned ? add_days(begin, -uniform_int(rng_, 1, live.short_term ? 300 : 3650))
                                : add_days(begin, uniform_int(rng_, 0, days_between(begin, end)));
        const std::int64_t term =
            live.short_term ? uniform_int(rng_, 40, 364) : uniform_int(rng_, 2 * 365, 30 * 365);
        s.maturity_date = add_days(s.issue_date, term);
        if (days_between(end, *s.maturity_date) > 0) break;
      }
      s.esa2010 = live.short_term ? "F_31" : "F_32";
      s.amount_outstanding = std::max(1e5, std::round(std::exp(normal(rng_, std::log(5e7), 1.2))));
      s.price = round_to(100.0 * std::exp(normal(rng_, 0.0, 0.05)), 1e-4);
      if (!live.short_term && bernoulli(rng_, 0.8)) {
        s.coupon_rate = round_to(uniform(rng_, 0.5, 6.0), 0.125);
        live.info.coupon_frequency_months = bernoulli(rng_, 0.6) ? 12 : 6;
      }
    } else {
      s.issuer_sector = pick(kEquitySectors, rng_);
      s.publication_price_type = pick(kEquityPriceTypes, rng_);
      s.issue_date = seasoned ? add_days(begin, -uniform_int(rng_, 365, 9000))
                              : add_days(begin, uniform_int(rng_, 0, days_between(begin, end)));
      s.esa2010 = "F_511";
      live.shares = std::round(std::exp(normal(rng_, std::log(5e7), 1.0)));
      s.price = round_to(std::exp(normal(rng_, std::log(40.0), 0.8)), 1e-4);
      s.market_cap = std::round(live.shares * s.price);
      if (bernoulli(rng_, 0.7)) {
        s.dividend_amount = std::max(0.01, round_to(s.price * uniform(rng_, 0.01, 0.05), 0.01));
      }
    }
    return live;
  }

  void evolve(Live& live, Month /*month*/) {
    auto& s = live.snap;
    if (live.info.kind == InstrumentKind::Debt) {
      double ao = s.amount_outstanding * std::exp(normal(rng_, 0.0, 0.02));
      if (bernoulli(rng_, 0.01)) {
        const double jump = uniform(rng_, 0.2, 0.5);
        ao *= bernoulli(rng_, 0.5) ? 1.0 + jump : 1.0 - jump;
      }
      s.amount_outstanding = std::max(1000.0, std::round(ao));
      s.price = round_to(s.price * std::exp(normal(rng_, 0.0, 0.01)), 1e-4);
    } else {
      if (bernoulli(rng_, 0.01)) live.shares = std::round(live.shares * (1.0 + uniform(rng_, 0.05, 0.2)));
      s.price = std::max(0.01, round_to(s.price * std::exp(normal(rng_, 0.0, 0.06)), 1e-4));
      s.market_cap = std::round(live.shares * s.price);
      if (s.dividend_amount > 0 && bernoulli(rng_, 1.0 / 12.0)) {
        s.dividend_amount =
            std::max(0.01, round_to(s.dividend_amount * std::exp(normal(rng_, 0.0, 0.1)), 0.01));
      }
    }
    if (bernoulli(rng_, 0.01)) {
      const std::string prev = s.publication_price_type;
      while (s.publication_price_type == prev) {
        s.publication_price_type = live.info.kind == InstrumentKind::Debt
                                       ? pick(kDebtPriceTypes, rng_)
                                       : pick(kEquityPriceTypes, rng_);
      }
    }
  }

  const GenConfig& config_;
  Rng rng_;
  std::uint64_t next_id_ = 1;
};

std::string opt_date(const std::optional<Date>& d) { return d ? format_date(*d) : std::string(); }

std::optional<Date> parse_opt_date(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_date(s);
}

// Swaps the two leading digits when that at least doubles or halves the
// value; otherwise falls back to a x10 slip.
double transpose_leading_digits(double value) {
  std::string digits = std::to_string(static_cast<long long>(std::llround(value)));
  if (digits.size() >= 2 && digits[1] != '0') {
    const int a = digits[0] - '0';
    const int b = digits[1] - '0';
    const double ratio = (10.0 * b + a) / (10.0 * a + b);
    if (ratio >= 2.0 || ratio <= 0.5) {
      std::swap(digits[0], digits[1]);
      return static_cast<double>(std::stoll(digits));
    }
  }
  return std::round(value * 10.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

const std::vector<std::string>& snapshot_fields() {
  static const std::vector<std::string> kFields{
      "amount_outstanding", "market_cap",     "price",           "coupon_rate",
      "coupon_date",        "dividend_amount", "issue_date",      "maturity_date",
      "security_status",    "esa2010",         "publication_price_type", "country",
      "currency",           "issuer_sector",
  };
  return kFields;
}

std::string get_field(const InstrumentSnapshot& s, std::string_view field) {
  if (field == "amount_outstanding") return format_double(s.amount_outstanding);
  if (field == "market_cap") return format_double(s.market_cap);
  if (field == "price") return format_double(s.price);
  if (field == "coupon_rate") return format_double(s.coupon_rate);
  if (field == "coupon_date") return opt_date(s.coupon_date);
  if (field == "dividend_amount") return format_double(s.dividend_amount);
  if (field == "issue_date") return format_date(s.issue_date);
  if (field == "maturity_date") return opt_date(s.maturity_date);
  if (field == "security_status") return std::to_string(s.security_status);
  if (field == "esa2010") return s.esa2010;
  if (field == "publication_price_type") return s.publication_price_type;
  if (field == "country") return s.country;
  if (field == "currency") return s.currency;
  if (field == "issuer_sector") return s.issuer_sector;
  throw InvalidArgument("unknown snapshot field: " + std::string(field));
}

void set_field(InstrumentSnapshot& s, std::string_view field, const std::string& value) {
  auto non_negative = [&](double v) {
    if (!(v >= 0.0)) throw InvalidArgument(std::string(field) + " must be non-negative");
    return v;
  };
  if (field == "amount_outstanding") {
    s.amount_outstanding = non_negative(parse_double(value));
  } else if (field == "market_cap") {
    s.market_cap = non_negative(parse_double(value));
  } else if (field == "price") {
    s.price = non_negative(parse_double(value));
  } else if (field == "coupon_rate") {
    s.coupon_rate = parse_double(value);
  } else if (field == "coupon_date") {
    s.coupon_date = parse_opt_date(value);
  } else if (field == "dividend_amount") {
    s.dividend_amount = non_negative(parse_double(value));
  } else if (field == "issue_date") {
    s.issue_date = parse_date(value);
  } else if (field == "maturity_date") {
    s.maturity_date = parse_opt_date(value);
  } else if (field == "security_status") {
    s.security_status = std::stoi(value);
  } else if (field == "esa2010") {
    s.esa2010 = value;
  } else if (field == "publication_price_type") {
    s.publication_price_type = value;
  } else if (field == "country") {
    s.country = value;
  } else if (field == "currency") {
    s.currency = value;
  } else if (field == "issuer_sector") {
    s.issuer_sector = value;
  } else {
    throw InvalidArgument("unknown snapshot field: " + std::string(field));
  }
}

// ---------------------------------------------------------------------------
// Corpus / GroundTruth containers
// ---------------------------------------------------------------------------

std::vector<Month> Corpus::months() const {
  std::vector<Month> out;
  for (std::size_t m = 0; m < n_months; ++m) out.push_back(add_months(first_month, static_cast<int>(m)));
  return out;
}

std::optional<std::size_t> Corpus::find(const std::string& instrument_id, Month month) const {
  const auto it = index_.find(row_key(instrument_id, month));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Corpus::rebuild_index() {
  index_.clear();
  index_.reserve(snapshots.size());
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    index_.emplace(row_key(snapshots[i].instrument_id, snapshots[i].ref_month), i);
  }
}

std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::signal: return "signal";
    case CorruptionKind::noise: return "noise";
    case CorruptionKind::planted: return "planted";
  }
  return "signal";
}

namespace {
std::string truth_key(const std::string& id, Month m, ExceptionType t) {
  return row_key(id, m) + "/" + std::string(to_string(t));
}
}  // namespace

const GroundTruthEntry* GroundTruth::find(const std::string& instrument_id, Month month,
                                          ExceptionType type) const {
  const auto it = index_.find(truth_key(instrument_id, month, type));
  return it == index_.end() ? nullptr : &entries[it->second];
}

std::size_t GroundTruth::error_count(ExceptionType type) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
    return e.type == type && e.is_error;
  }));
}

void GroundTruth::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    index_.emplace(truth_key(entries[i].instrument_id, entries[i].ref_month, entries[i].type), i);
  }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

void GenConfig::validate() const {
  if (n_instruments == 0) throw InvalidArgument("n_instruments must be positive");
  if (n_months < 4) throw InvalidArgument("n_months must be at least 4 (3-month feature window)");
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    if (!(error_rate[t] >= 0.0 && error_rate[t] <= 1.0)) {
      throw InvalidArgument("error_rate must lie in [0,1]");
    }
    if (error_rate[t] >= 1.0) {
      throw InvalidArgument("error_rate 1 would corrupt every record of " +
                            std::string(to_string(kAllExceptionTypes[t])) +
                            "; training needs negatives");
    }
  }
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(name) + " must lie in [0,1]");
  };
  unit(signal_strength, "signal_strength");
  unit(equity_share, "equity_share");
  unit(short_term_share, "short_term_share");
  unit(idqm_share, "idqm_share");
  unit(confirm_rate, "confirm_rate");
  unit(planted_rate, "planted_rate");
  if (!(conditioning_weight >= 1.0)) throw InvalidArgument("conditioning_weight must be >= 1");
  if (!start_month.ok()) throw InvalidArgument("invalid start_month");
}

Corpus generate_universe(const GenConfig& config) {
  config.validate();
  return UniverseBuilder(config).build();
}

bool signal_eligible(const InstrumentSnapshot& s, ExceptionType type,
                     const InstrumentSnapshot* previous) {
  if (previous == nullptr) return false;
  const Date end = month_end(s.ref_month);
  const bool equity = s.esa2010 == "F_511";
  switch (type) {
    case ExceptionType::AmountOutstanding:
      return !equity && s.amount_outstanding > 0;
    case ExceptionType::CouponDate:
      return s.coupon_date && s.maturity_date && days_between(end, *s.maturity_date) > 0;
    case ExceptionType::SecurityStatus:
      return s.security_status == 100;
    case ExceptionType::MaturityDate:
      return s.maturity_date.has_value();
    case ExceptionType::IssueDate:
      return !s.maturity_date || days_between(end, *s.maturity_date) > 2;
    case ExceptionType::DividendAmount:
      return equity && s.dividend_amount > 0;
    case ExceptionType::ESAI2010:
      return true;
  }
  return false;
}

namespace {

// Applies a type-specific signal corruption; returns the corrupted field.
void corrupt_signal(InstrumentSnapshot& s, ExceptionType type, Rng& rng) {
  const Date end = month_end(s.ref_month);
  switch (type) {
    case ExceptionType::AmountOutstanding: {
      const auto which = uniform_int(rng, 0, 2);
      if (which == 0) {
        s.amount_outstanding = std::round(s.amount_outstanding * 10.0);
      } else if (which == 1) {
        s.amount_outstanding = std::round(s.amount_outstanding / 10.0);
      } else {
        s.amount_outstanding = transpose_leading_digits(s.amount_outstanding);
      }
      return;
    }
    case ExceptionType::CouponDate: {
      // Stale: the schedule date before the current one, when it exists.
      const Date current = *s.coupon_date;
      const Date stale = add_months(current, -12);
      if (bernoulli(rng, 0.5) && days_between(s.issue_date, stale) > 0 &&
          days_between(stale, end) >= 0) {
        s.coupon_date = stale;
      } else {
        s.coupon_date = add_days(*s.maturity_date, uniform_int(rng, 30, 400));
      }
      return;
    }
    case ExceptionType::SecurityStatus: {
      const auto which = uniform_int(rng, 0, 2);
      s.security_status = which == 0 ? 201 : which == 1 ? 203 : 101;
      return;
    }
    case ExceptionType::MaturityDate:
      s.maturity_date = add_days(s.issue_date, -uniform_int(rng, 1, 3650));
      return;
    case ExceptionType::IssueDate: {
      std::int64_t horizon = 720;
      if (s.maturity_date) horizon = std::min<std::int64_t>(horizon, days_between(end, *s.maturity_date) - 1);
      s.issue_date = add_days(end, uniform_int(rng, 1, std::max<std::int64_t>(1, horizon)));
      return;
    }
    case ExceptionType::DividendAmount:
      s.dividend_amount = bernoulli(rng, 0.5) ? round_to(s.dividend_amount * 100.0, 1e-6)
                                              : round_to(s.dividend_amount / 100.0, 1e-6);
      return;
    case ExceptionType::ESAI2010:
      if (s.esa2010 == "F_31") {
        s.esa2010 = "F_32";
      } else if (s.esa2010 == "F_32") {
        s.esa2010 = "F_31";
      } else {
        s.esa2010 = bernoulli(rng, 0.5) ? "F_31" : "F_32";
      }
      return;
  }
}

// A plausible alternative value for a noise corruption; differs from the
// observed value.
std::string noise_clean_value(const InstrumentSnapshot& s, ExceptionType type, Rng& rng) {
  const std::string field(primary_field(type));
  const std::string observed = get_field(s, field);
  std::string alt;
  switch (type) {
    case ExceptionType::AmountOutstanding: {
      const double v = s.amount_outstanding;
      double a = v > 0 ? std::round(v * std::exp(normal(rng, 0.0, 0.02)))
                       : std::round(std::exp(normal(rng, std::log(5e7), 1.0)));
      if (a == v) a = v + 1.0;
      alt = format_double(a);
      break;
    }
    case ExceptionType::CouponDate:
      alt = format_date(s.coupon_date ? add_months(*s.coupon_date, 6)
                                      : add_months(month_end(s.ref_month), 6));
      break;
    case ExceptionType::SecurityStatus: {
      static constexpr std::array<int, 4> kCodes{100, 101, 201, 203};
      int code = s.security_status;
      while (code == s.security_status) code = kCodes[static_cast<std::size_t>(uniform_int(rng, 0, 3))];
      alt = std::to_string(code);
      break;
    }
    case ExceptionType::MaturityDate:
      alt = format_date(s.maturity_date ? add_days(*s.maturity_date, 365)
                                        : add_days(s.issue_date, 3650));
      break;
    case ExceptionType::IssueDate:
      alt = format_date(add_days(s.issue_date, -30));
      break;
    case ExceptionType::DividendAmount: {
      const double v = s.dividend_amount;
      double a = v > 0 ? std::max(0.01, round_to(v * std::exp(normal(rng, 0.0, 0.1)), 0.01)) : 0.5;
      if (a == v) a = v + 0.01;
      alt = format_double(a);
      break;
    }
    case ExceptionType::ESAI2010:
      alt = s.esa2010 == "F_31" ? "F_32" : s.esa2010 == "F_32" ? "F_31" : "F_32";
      break;
  }
  if (alt == observed) throw Error("noise corruption produced an unchanged value");
  return alt;
}

std::string audit_timestamp(Month month, Rng& rng) {
  const Date d = add_days(month_end(month), uniform_int(rng, 1, 20));
  char buf[40];
  std::snprintf(buf, sizeof buf, "%sT%02lld:%02lld:00Z", format_date(d).c_str(),
                static_cast<long long>(uniform_int(rng, 7, 18)),
                static_cast<long long>(uniform_int(rng, 0, 59)));
  return buf;
}

}  // namespace

InjectionResult inject_exceptions(const Corpus& corpus, const GenConfig& config) {
  config.validate();
  InjectionResult result;
  result.corpus = corpus;
  auto& out = result.corpus;
  const auto& clean = corpus.snapshots;
  const std::size_t n = clean.size();

  std::vector<const InstrumentSnapshot*> previous(n, nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = clean[i];
    if (auto p = corpus.find(s.instrument_id, add_months(s.ref_month, -1))) previous[i] = &clean[*p];
  }

  // Hot countries per type.
  std::vector<std::string> countries;
  for (const auto& c : kCountries) countries.emplace_back(c.value);
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    Rng rng(mix_seed(config.seed, kHot + t));
    auto shuffled = countries;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    shuffled.resize(3);
    std::sort(shuffled.begin(), shuffled.end());
    result.truth.hot_values[t] = shuffled;
  }

  std::vector<std::uint8_t> taken(n, 0);
  Rng morph(mix_seed(config.seed, kMorphology));
  const double s = config.signal_strength;

  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const ExceptionType type = kAllExceptionTypes[t];
    const auto& hot = result.truth.hot_values[t];
    auto weight_of = [&](const InstrumentSnapshot& snap) {
      return std::binary_search(hot.begin(), hot.end(), snap.country) ? config.conditioning_weight : 1.0;
    };
    double weight_sum = 0;
    std::size_t eligible = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (signal_eligible(clean[i], type, previous[i])) {
        weight_sum += weight_of(clean[i]);
        ++eligible;
      }
    }
    const double mean_weight = eligible ? weight_sum / static_cast<double>(eligible) : 1.0;

    Rng select(mix_seed(config.seed, kSelection + t));
    for (std::size_t i = 0; i < n; ++i) {
      const double u = uniform(select, 0.0, 1.0);
      if (taken[i]) continue;
      const bool can_signal = signal_eligible(clean[i], type, previous[i]);
      const double w = weight_of(clean[i]);
      const double p_signal =
          can_signal ? std::min(1.0, s * config.error_rate[t] * w / mean_weight) : 0.0;
      const double p_noise = (1.0 - s) * config.error_rate[t];
      if (u >= p_signal + p_noise) continue;

      GroundTruthEntry e;
      e.instrument_id = clean[i].instrument_id;
      e.ref_month = clean[i].ref_month;
      e.type = type;
      e.corrupted_field = std::string(primary_field(type));
      if (u < p_signal) {
        e.kind = CorruptionKind::signal;
        e.conditioned = w > 1.0;
        e.clean_value = get_field(clean[i], e.corrupted_field);
        corrupt_signal(out.snapshots[i], type, morph);
        e.corrupted_value = get_field(out.snapshots[i], e.corrupted_field);
        if (e.corrupted_value == e.clean_value) continue;
      } else {
        e.kind = CorruptionKind::noise;
        e.corrupted_value = get_field(clean[i], e.corrupted_field);
        e.clean_value = noise_clean_value(clean[i], type, morph);
      }
      taken[i] = 1;
      result.truth.entries.push_back(std::move(e));
    }
  }

  if (config.planted_rate > 0) {
    Rng planted(mix_seed(config.seed, kPlanted));
    for (std::size_t i = 0; i < n; ++i) {
      const double u = uniform(planted, 0.0, 1.0);
      if (taken[i] || previous[i] == nullptr || u >= config.planted_rate) continue;
      const auto& snap = clean[i];
      if (snap.esa2010 == "F_511" || !is_alive_status(snap.security_status)) continue;
      if (previous[i]->amount_outstanding == snap.amount_outstanding) continue;
      GroundTruthEntry e;
      e.instrument_id = snap.instrument_id;
      e.ref_month = snap.ref_month;
      e.type = ExceptionType::AmountOutstanding;
      e.corrupted_field = "amount_outstanding";
      e.clean_value = get_field(snap, e.corrupted_field);
      out.snapshots[i].amount_outstanding = previous[i]->amount_outstanding;
      e.corrupted_value = get_field(out.snapshots[i], e.corrupted_field);
      e.kind = CorruptionKind::planted;
      taken[i] = 1;
      result.truth.entries.push_back(std::move(e));
    }
  }

  // Stable order: corpus order, then type.
  std::vector<std::size_t> position(n);
  std::iota(position.begin(), position.end(), 0);
  std::sort(result.truth.entries.begin(), result.truth.entries.end(),
            [&](const GroundTruthEntry& a, const GroundTruthEntry& b) {
              const auto ia = *corpus.find(a.instrument_id, a.ref_month);
              const auto ib = *corpus.find(b.instrument_id, b.ref_month);
              if (ia != ib) return ia < ib;
              return a.type < b.type;
            });
  result.truth.rebuild_index();

  // Initial audit log: a correction per covered error, plus confirmations of
  // clean records, all tagged bulk / iDQM by the same share.
  Rng audit_rng(mix_seed(config.seed, kAudit));
  Rng confirm_rng(mix_seed(config.seed, kConfirm));
  std::size_t next_entry = 0;
  std::uint64_t next_id = 1;
  auto tag = [&](AuditRecord& r) {
    r.audit_id = next_id++;
    r.source = bernoulli(audit_rng, config.idqm_share) ? AuditSource::iDQM : AuditSource::bulk;
    char actor[16];
    std::snprintf(actor, sizeof actor, "dqm-%02lld", static_cast<long long>(uniform_int(audit_rng, 1, 40)));
    r.actor = actor;
    r.timestamp = audit_timestamp(r.ref_month, audit_rng);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& snap = out.snapshots[i];
    bool has_error = false;
    while (next_entry < result.truth.entries.size() &&
           result.truth.entries[next_entry].instrument_id == snap.instrument_id &&
           result.truth.entries[next_entry].ref_month == snap.ref_month) {
      const auto& e = result.truth.entries[next_entry++];
      has_error = true;
      if (e.kind == CorruptionKind::planted) continue;
      AuditRecord r;
      r.instrument_id = e.instrument_id;
      r.ref_month = e.ref_month;
      r.field = e.corrupted_field;
      r.before = e.corrupted_value;
      r.after = e.clean_value;
      r.exception_type = e.type;
      r.action = AuditAction::correct;
      tag(r);
      result.audit_log.push_back(std::move(r));
    }
    const double u = uniform(confirm_rng, 0.0, 1.0);
    const auto t = static_cast<std::size_t>(uniform_int(confirm_rng, 0, kNumExceptionTypes - 1));
    if (!has_error && u < config.confirm_rate) {
      AuditRecord r;
      r.instrument_id = snap.instrument_id;
      r.ref_month = snap.ref_month;
      r.exception_type = kAllExceptionTypes[t];
      r.field = std::string(primary_field(r.exception_type));
      r.before = get_field(snap, r.field);
      r.after = r.before;
      r.action = AuditAction::confirm;
      tag(r);
      result.audit_log.push_back(std::move(r));
    }
  }
  out.rebuild_index();
  return result;
}

std::vector<std::string> check_clean_invariants(const Corpus& corpus) {
  std::vector<std::string> violations;
  std::set<std::string> seen;
  for (const auto& s : corpus.snapshots) {
    const std::string key = row_key(s.instrument_id, s.ref_month);
    if (!seen.insert(key).second) violations.push_back(key + ": duplicate (instrument, month)");
    if (!(s.amount_outstanding >= 0)) violations.push_back(key + ": negative amount_outstanding");
    if (!(s.market_cap >= 0)) violations.push_back(key + ": negative market_cap");
    if (!(s.dividend_amount >= 0)) violations.push_back(key + ": negative dividend_amount");
    if (s.maturity_date) {
      if (days_between(s.issue_date, *s.maturity_date) < 0) {
        violations.push_back(key + ": issue_date after maturity_date");
      }
      if (days_between(month_end(s.ref_month), *s.maturity_date) <= 0 &&
          is_alive_status(s.security_status)) {
        violations.push_back(key + ": matured record carries an alive status");
      }
    }
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const InstrumentSnapshot& s) {
  nlohmann::json j{{"schema_version", kSchemaVersion},
                   {"instrument_id", s.instrument_id},
                   {"ref_month", format_month(s.ref_month)}};
  for (const auto& f : snapshot_fields()) j[f] = get_field(s, f);
  return j;
}

InstrumentSnapshot snapshot_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw VersionMismatch("snapshot schema_version mismatch");
    }
    InstrumentSnapshot s;
    s.instrument_id = j.at("instrument_id").get<std::string>();
    s.ref_month = parse_month(j.at("ref_month").get<std::string>());
    for (const auto& f : snapshot_fields()) set_field(s, f, j.at(f).get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("snapshot: ") + e.what());
  }
}

nlohmann::json to_json(const GroundTruthEntry& e) {
  return nlohmann::json{{"schema_version", kSchemaVersion},
                        {"instrument_id", e.instrument_id},
                        {"ref_month", format_month(e.ref_month)},
                        {"exception_type", std::string(to_string(e.type))},
                        {"is_error", e.is_error},
                        {"corrupted_field", e.corrupted_field},
                        {"clean_value", e.clean_value},
                        {"corrupted_value", e.corrupted_value},
                        {"kind", std::string(to_string(e.kind))},
                        {"conditioned", e.conditioned}};
}

GroundTruthEntry truth_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw VersionMismatch("ground truth schema_version mismatch");
    }
    GroundTruthEntry e;
    e.instrument_id = j.at("instrument_id").get<std::string>();
    e.ref_month = parse_month(j.at("ref_month").get<std::string>());
    const auto type = parse_exception_type(j.at("exception_type").get<std::string>());
    if (!type) throw InvalidArgument("unknown exception type in ground truth");
    e.type = *type;
    e.is_error = j.at("is_error").get<bool>();
    e.corrupted_field = j.at("corrupted_field").get<std::string>();
    e.clean_value = j.at("clean_value").get<std::string>();
    e.corrupted_value = j.at("corrupted_value").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    e.kind = kind == "noise" ? CorruptionKind::noise
             : kind == "planted" ? CorruptionKind::planted
                                 : CorruptionKind::signal;
    e.conditioned = j.at("conditioned").get<bool>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptPayload(std::string("ground truth: ") + ex.what());
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  return out;
}

template <class F>
void for_each_json_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw CorruptPayload(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    f(j);
  }
}

}  // namespace

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& s : corpus.snapshots) out << to_json(s).dump() << '\n';
}

void write_corpus_csv(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "instrument_id,ref_month";
  for (const auto& f : snapshot_fields()) out << ',' << f;
  out << '\n';
  for (const auto& s : corpus.snapshots) {
    out << s.instrument_id << ',' << format_month(s.ref_month);
    for (const auto& f : snapshot_fields()) out << ',' << get_field(s, f);
    out << '\n';
  }
}

Corpus read_corpus_jsonl(const std::filesystem::path& path) {
  Corpus corpus;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    corpus.snapshots.push_back(snapshot_from_json(j));
  });
  if (corpus.snapshots.empty()) throw InvalidArgument("empty corpus: " + path.string());
  int lo = month_ordinal(corpus.snapshots.front().ref_month), hi = lo;
  std::map<std::string, InstrumentStatic> registry;
  for (const auto& s : corpus.snapshots) {
    const int m = month_ordinal(s.ref_month);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
    auto [it, inserted] = registry.try_emplace(s.instrument_id);
    auto& info = it->second;
    if (inserted) {
      info.instrument_id = s.instrument_id;
      info.first_month = s.ref_month;
      info.kind = s.esa2010 == "F_511" ? InstrumentKind::Equity : InstrumentKind::Debt;
    }
    info.last_month = s.ref_month;
  }
  for (auto& [id, info] : registry) corpus.registry.push_back(info);
  corpus.first_month = corpus.snapshots.front().ref_month;
  for (const auto& s : corpus.snapshots) {
    if (month_ordinal(s.ref_month) == lo) corpus.first_month = s.ref_month;
  }
  corpus.n_months = static_cast<std::size_t>(hi - lo + 1);
  corpus.rebuild_index();
  return corpus;
}

void write_truth_jsonl(const GroundTruth& truth, const std::filesystem::path& path) {
  auto out = open_out(path);
  nlohmann::json header{{"schema_version", kSchemaVersion},
                        {"conditioning_feature", truth.conditioning_feature}};
  nlohmann::json hot = nlohmann::json::object();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    hot[std::string(to_string(kAllExceptionTypes[t]))] = truth.hot_values[t];
  }
  header["hot_values"] = hot;
  out << header.dump() << '\n';
  for (const auto& e : truth.entries) out << to_json(e).dump() << '\n';
}

GroundTruth read_truth_jsonl(const std::filesystem::path& path) {
  GroundTruth truth;
  bool header = true;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    if (header) {
      header = false;
      if (j.contains("conditioning_feature")) {
        if (j.at("schema_version").get<int>() != kSchemaVersion) {
          throw VersionMismatch("ground truth schema_version mismatch");
        }
        truth.conditioning_feature = j.at("conditioning_feature").get<std::string>();
        for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
          const std::string name(to_string(kAllExceptionTypes[t]));
          if (j.at("hot_values").contains(name)) {
            truth.hot_values[t] = j.at("hot_values").at(name).get<std::vector<std::string>>();
          }
        }
        return;
      }
    }
    truth.entries.push_back(truth_from_json(j));
  });
  truth.rebuild_index();
  return truth;
}

}  // namespace dqloop
