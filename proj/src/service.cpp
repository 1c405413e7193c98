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

#include "dqloop/service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iostream>

#include "httplib.h"

namespace dqloop {

std::string_view to_string(ReviewState s) {
  switch (s) {
    case ReviewState::open: return "open";
    case ReviewState::confirmed: return "confirmed";
    case ReviewState::corrected: return "corrected";
  }
  return "open";
}

std::string ItemId::str() const {
  return std::string(to_string(type)) + ":" + instrument_id + ":" + format_month(month);
}

namespace {
ExceptionType require_type(const std::string& text) {
  const auto t = parse_exception_type(text);
  if (!t) throw InvalidArgument("unknown exception type " + text);
  return *t;
}

}  // namespace

ItemId parse_item_id(const std::string& text) {
  const auto a = text.find(':');
  const auto b = text.rfind(':');
  if (a == std::string::npos || a == b) throw InvalidArgument("item id must be <type>:<instrument>:<YYYY-MM>");
  ItemId id;
  id.type = require_type(text.substr(0, a));
  id.instrument_id = text.substr(a + 1, b - a - 1);
  id.month = parse_month(text.substr(b + 1));
  if (id.instrument_id.empty()) throw InvalidArgument("empty instrument id");
  return id;
}

std::optional<std::size_t> Deployment::row(const std::string& instrument_id, Month m) const {
  const auto it = row_index.find(row_key(instrument_id, m));
  if (it == row_index.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::size_t> strided_sample(const std::vector<std::size_t>& rows, std::size_t limit) {
  if (rows.size() <= limit) return rows;
  std::vector<std::size_t> out;
  out.reserve(limit);
  for (std::size_t k = 0; k < limit; ++k) out.push_back(rows[k * rows.size() / limit]);
  return out;
}

std::size_t param_size(const Request& r, const std::string& key, std::size_t fallback) {
  const auto it = r.params.find(key);
  if (it == r.params.end()) return fallback;
  std::size_t pos = 0;
  const auto v = std::stoll(it->second, &pos);
  if (pos != it->second.size() || v < 0) throw InvalidArgument(key + " must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

ReviewService::ReviewService(Config config, Corpus corpus, std::shared_ptr<AuditStore> store,
                             std::shared_ptr<ModelRegistry> registry, Clock clock)
    : config_(std::move(config)),
      corpus_(std::move(corpus)),
      store_(std::move(store)),
      registry_(std::move(registry)),
      clock_(std::move(clock)) {
  if (!clock_) clock_ = [](const ItemId&) { return utc_now(); };
  const auto active = registry_->active();
  if (!active) throw InvalidArgument("model registry has no active version");
  corpus_.rebuild_index();
  publish(build_deployment(registry_->load(*active)));
}

ReviewService::~ReviewService() {
  wait_idle();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(job_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

void ReviewService::wait_idle() {
  std::unique_lock lock(job_mu_);
  job_cv_.wait(lock, [&] { return !retrain_running_ && !monitoring_running_; });
}

std::shared_ptr<const Deployment> ReviewService::deployment() const {
  std::lock_guard lock(deploy_mu_);
  return current_;
}

ReviewState ReviewService::state(const std::string& item) const {
  auto& self = const_cast<ReviewService&>(*this);
  std::lock_guard lock(self.feedback_mu_);
  const auto it = reviews_.find(item);
  return it == reviews_.end() ? ReviewState::open : it->second.first;
}

std::shared_ptr<Deployment> ReviewService::build_deployment(const ModelBundle& bundle) const {
  auto d = std::make_shared<Deployment>();
  auto b = std::make_shared<ModelBundle>(bundle);
  auto fm = std::make_shared<FeatureMatrix>(serving_matrix(corpus_, *b));
  // Labels as of the bundle cutoff, for exemplars.
  const auto labels = labels_for(corpus_, store_->records(), b->cutoff, config_.assemble);
  const auto split = fm->split;
  attach_labels(*fm, labels);
  fm->split = split;
  for (std::size_t i = 0; i < fm->rows(); ++i) d->row_index.emplace(row_key(fm->instrument_ids[i], fm->months[i]), i);
  d->bundle = std::move(b);
  d->fm = std::move(fm);
  return d;
}

void ReviewService::publish(std::shared_ptr<Deployment> d) {
  std::shared_ptr<const Deployment> frozen = std::move(d);
  {
    std::lock_guard lock(deploy_mu_);
    current_ = frozen;
  }
  if (config_.service.monitoring && frozen->latest_month) start_monitoring(frozen);
}

Response ReviewService::error(int status, const std::string& code, const std::string& message,
                              nlohmann::json extra) const {
  extra["schema_version"] = kSchemaVersion;
  extra["error"] = {{"code", code}, {"message", message}};
  if (!extra.contains("model_version")) {
    const auto d = deployment();
    extra["model_version"] = d ? nlohmann::json(d->bundle->version) : nlohmann::json(nullptr);
  }
  return {status, extra};
}

Response ReviewService::ok(nlohmann::json body, const Deployment& d) const {
  body["schema_version"] = kSchemaVersion;
  body["model_version"] = d.bundle->version;
  return {200, body};
}

Response ReviewService::handle(const Request& request) {
  try {
    return route(request);
  } catch (const InvalidArgument& e) {
    return error(400, "invalid_argument", e.what());
  } catch (const SchemaMismatch& e) {
    return error(500, "schema_mismatch", e.what());
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

Response ReviewService::route(const Request& r) {
  const auto& p = r.path;
  auto under = [&](std::string_view prefix) { return p.rfind(prefix, 0) == 0 && p.size() > prefix.size(); };
  if (r.method == "GET") {
    if (p == "/health") return health();
    if (p == "/queue") return queue(r);
    if (p == "/monitoring") return monitoring();
    if (under("/explain/")) return explain(r, p.substr(9));
    if (under("/counterfactual/")) return counterfactual(r, p.substr(16));
    if (under("/exemplars/")) return exemplars(r, p.substr(11));
    if (under("/jobs/")) return job(p.substr(6));
  } else if (r.method == "POST") {
    if (p == "/feedback") return feedback(r);
    if (p == "/retrain") return retrain(r);
    if (p == "/score") return score(r);
  }
  return error(404, "not_found", "no route for " + r.method + " " + p);
}

Response ReviewService::health() {
  const auto d = deployment();
  nlohmann::json scored = nlohmann::json::array();
  for (const auto& [ord, run] : d->runs) scored.push_back(format_month(run->month));
  return ok({{"status", "ok"}, {"cutoff", format_month(d->bundle->cutoff)}, {"scored_months", scored}}, *d);
}

std::optional<Response> ReviewService::check_version(const Request& r, const Deployment& d) const {
  const auto it = r.params.find("model_version");
  if (it == r.params.end() || it->second == d.bundle->version) return std::nullopt;
  if (auto next = registry_->superseded_by(it->second)) {
    return error(410, "model_retired", "model version " + it->second + " was retired",
                 {{"superseded_by", *next}});
  }
  return error(404, "unknown_model_version", "unknown model version " + it->second);
}

Response ReviewService::queue(const Request& r) {
  const auto d = deployment();
  const auto type_it = r.params.find("type");
  if (type_it == r.params.end()) return error(400, "invalid_argument", "type is required");
  const auto type = require_type(type_it->second);
  if (d->runs.empty()) return error(409, "not_scored", "no scoring run yet; POST /score first");
  std::shared_ptr<const ScoringRun> run = d->runs.rbegin()->second;
  if (auto m = r.params.find("month"); m != r.params.end()) {
    const auto it = d->runs.find(month_ordinal(parse_month(m->second)));
    if (it == d->runs.end()) return error(409, "not_scored", "month " + m->second + " has not been scored");
    run = it->second;
  }
  const std::size_t limit = param_size(r, "limit", config_.service.queue_limit);
  const std::size_t offset = param_size(r, "offset", 0);
  const auto& q = run->queues[index_of(type)];
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t k = offset; k < q.size() && k < offset + limit; ++k) {
    const ItemId id{type, q[k].instrument_id, q[k].ref_month};
    const std::string s = id.str();
    auto j = q[k].to_json();
    j["item"] = s;
    j["review_state"] = std::string(to_string(state(s)));
    j["links"] = {{"explanation", "/explain/" + s},
                  {"counterfactual", "/counterfactual/" + s},
                  {"exemplars", "/exemplars/" + s}};
    items.push_back(std::move(j));
  }
  return ok({{"run_id", run->run_id},
             {"month", format_month(run->month)},
             {"exception_type", std::string(to_string(type))},
             {"offset", offset},
             {"total", q.size()},
             {"items", items}},
            *d);
}

Response ReviewService::explain(const Request& r, const std::string& item) {
  const auto d = deployment();
  if (auto e = check_version(r, *d)) return *e;
  const auto id = parse_item_id(item);
  const auto row = d->row(id.instrument_id, id.month);
  if (!row) return error(404, "unknown_item", "no record for " + item);
  const auto x = d->fm->row_view(id.type, *row);
  const auto& model = d->bundle->model(id.type);
  auto a = shap_local(model, x);
  a.row_id = item;
  a.model_id = d->bundle->version + "/" + std::string(to_string(id.type));
  if (a.additivity_error() > 1e-6) return error(500, "additivity", "attribution does not add up");
  const auto names = d->fm->schema(id.type).names();
  // Proposal: the meta-classifier's type and the strongest local feature.
  std::array<double, kNumExceptionTypes> probs{};
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    probs[t] = d->bundle->models[t].predict_proba(d->fm->row_view(kAllExceptionTypes[t], *row));
  }
  const auto cls = d->bundle->meta.predict_class(probs);
  std::size_t top = 0;
  for (std::size_t j = 1; j < a.contributions.size(); ++j) {
    if (std::abs(a.contributions[j]) > std::abs(a.contributions[top])) top = j;
  }
  const auto month_run = d->runs.find(month_ordinal(id.month));
  return ok({{"item", item},
             {"run_id", month_run == d->runs.end() ? nlohmann::json(nullptr) : nlohmann::json(month_run->second->run_id)},
             {"attribution", a.to_json(names)},
             {"proposal",
              {{"exception_type", meta_class_name(cls)},
               {"field", cls == kNominalClass ? std::string() : std::string(primary_field(kAllExceptionTypes[cls]))},
               {"top_feature", names.empty() ? std::string() : names[top]}}}},
            *d);
}

const MutabilityPolicy& ReviewService::policy(const Deployment& d, ExceptionType type) {
  const std::string key = d.bundle->version + "|" + std::string(to_string(type));
  std::lock_guard lock(policy_mu_);
  auto& slot = policies_[key];
  if (!slot) slot = std::make_unique<MutabilityPolicy>(make_policy(*d.fm, type));
  return *slot;
}

Response ReviewService::counterfactual(const Request& r, const std::string& item) {
  const auto d = deployment();
  if (auto e = check_version(r, *d)) return *e;
  const auto id = parse_item_id(item);
  const auto row = d->row(id.instrument_id, id.month);
  if (!row) return error(404, "unknown_item", "no record for " + item);
  const auto& pol = policy(*d, id.type);
  auto options = config_.counterfactual;
  options.threshold = config_.threshold;
  options.n = param_size(r, "n", options.n);
  const auto x = d->fm->row_view(id.type, *row);
  const auto result = find_counterfactuals(d->bundle->model(id.type), x, pol, options);
  for (const auto& cf : result.items) {
    for (const auto& ch : cf.changes) {
      for (const auto& v : pol.variables) {
        if (v.name == ch.variable && v.immutable) return error(500, "immutable", "immutable feature changed");
      }
    }
  }
  auto body = result.to_json();
  for (auto& cf : body["counterfactuals"]) cf.erase("row");
  body["item"] = item;
  body["model_id"] = d->bundle->version + "/" + std::string(to_string(id.type));
  return ok(body, *d);
}

Response ReviewService::exemplars(const Request& r, const std::string& item) {
  const auto d = deployment();
  if (auto e = check_version(r, *d)) return *e;
  const auto id = parse_item_id(item);
  const auto row = d->row(id.instrument_id, id.month);
  if (!row) return error(404, "unknown_item", "no record for " + item);
  const std::size_t k = param_size(r, "k", config_.exemplars_k);
  if (k < 1) return error(400, "invalid_argument", "k must be >= 1");
  const std::size_t t = index_of(id.type);
  // Candidates: labeled rows up to the cutoff, positives first, capped.
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < d->fm->rows(); ++i) {
    if (i == *row || d->fm->split[i] != SplitTag::train) continue;
    (d->fm->labels[t][i] ? pos : neg).push_back(i);
  }
  auto cand = strided_sample(pos, 2000);
  const auto negs = strided_sample(neg, 2000);
  cand.insert(cand.end(), negs.begin(), negs.end());
  const DenseMatrix rows = d->fm->view(id.type, cand);
  std::vector<std::uint8_t> labels;
  for (auto i : cand) labels.push_back(d->fm->labels[t][i]);
  const GowerMetric metric(rows, categorical_mask(d->fm->schema(id.type)));
  const auto x = d->fm->row_view(id.type, *row);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : nearest_exemplars(x, rows, labels, metric, k)) {
    const auto i = cand[e.row];
    out.push_back({{"instrument_id", d->fm->instrument_ids[i]},
                   {"ref_month", format_month(d->fm->months[i])},
                   {"distance", e.distance},
                   {"label", e.label}});
  }
  return ok({{"item", item}, {"exemplars", out}}, *d);
}

Response ReviewService::feedback(const Request& r) {
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::exception&) {
    return error(400, "invalid_json", "request body is not JSON");
  }
  const auto d = deployment();
  const std::string item = body.value("item", "");
  const std::string action = body.value("action", "");
  const auto id = parse_item_id(item);
  if (action != "confirm" && action != "correct") return error(400, "invalid_argument", "action must be confirm or correct");
  if (d->runs.find(month_ordinal(id.month)) == d->runs.end()) {
    return error(404, "unknown_item", "month " + format_month(id.month) + " has not been scored");
  }
  const auto snap = corpus_.find(id.instrument_id, id.month);
  if (!snap || !d->row(id.instrument_id, id.month)) return error(404, "unknown_item", "no record for " + item);
  const std::string field = body.contains("field") && body["field"].is_string() ? body["field"].get<std::string>()
                                                                                 : std::string(primary_field(id.type));
  if (action == "correct" && !(body.contains("new_value") && body["new_value"].is_string())) {
    return error(422, "missing_value", "correct requires new_value");
  }
  AuditRecord rec;
  rec.instrument_id = id.instrument_id;
  rec.ref_month = id.month;
  rec.field = field;
  rec.before = get_field(corpus_.snapshots[*snap], field);
  rec.after = action == "correct" ? body["new_value"].get<std::string>() : rec.before;
  rec.exception_type = id.type;
  rec.source = AuditSource::iDQM;
  rec.actor = body.value("actor", "reviewer");
  rec.timestamp = clock_(id);
  rec.action = action == "correct" ? AuditAction::correct : AuditAction::confirm;
  validate(rec);
  std::uint64_t audit_id = 0;
  {
    std::lock_guard lock(feedback_mu_);
    if (auto it = reviews_.find(item); it != reviews_.end()) {
      return error(409, "already_reviewed", item + " is already " + std::string(to_string(it->second.first)),
                   {{"audit_id", it->second.second}});
    }
    audit_id = store_->append(rec);
    reviews_[item] = {action == "correct" ? ReviewState::corrected : ReviewState::confirmed, audit_id};
  }
  return ok({{"audit_id", audit_id}, {"item", item}, {"review_state", action == "correct" ? "corrected" : "confirmed"}},
            *d);
}

Response ReviewService::score(const Request& r) {
  nlohmann::json body;
  try {
    body = r.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::exception&) {
    return error(400, "invalid_json", "request body is not JSON");
  }
  if (!body.contains("month") || !body["month"].is_string()) return error(400, "invalid_argument", "month is required");
  const Month month = parse_month(body["month"].get<std::string>());
  std::shared_ptr<const Deployment> published;
  std::shared_ptr<const ScoringRun> run;
  {
    std::lock_guard lock(deploy_mu_);
    if (auto it = current_->runs.find(month_ordinal(month)); it != current_->runs.end()) {
      run = it->second;
      published = current_;
    }
  }
  if (!run) {
    const auto d = deployment();
    auto fresh = std::make_shared<const ScoringRun>(score_month(*d->bundle, *d->fm, month));
    std::lock_guard lock(deploy_mu_);
    // The deployment may have been swapped meanwhile; only attach to the
    // version that produced the run.
    auto next = std::make_shared<Deployment>(*current_);
    if (next->bundle->version == fresh->model_version) {
      next->runs[month_ordinal(month)] = fresh;
      if (!next->latest_month || month_ordinal(month) > month_ordinal(*next->latest_month)) next->latest_month = month;
      current_ = next;
    }
    run = fresh;
    published = current_;
  }
  std::size_t flagged = 0;
  for (const auto& p : run->probability) {
    flagged += static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [&](double v) { return v >= config_.threshold; }));
  }
  if (config_.service.monitoring && run->model_version == published->bundle->version) {
    start_monitoring(published);
  }
  return ok({{"run_id", run->run_id}, {"month", format_month(month)}, {"rows", run->rows.size()}, {"flagged", flagged}},
            *published);
}

Response ReviewService::retrain(const Request& r) {
  nlohmann::json body;
  try {
    body = r.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::exception&) {
    return error(400, "invalid_json", "request body is not JSON");
  }
  const Month cutoff = body.contains("cutoff") ? parse_month(body["cutoff"].get<std::string>())
                                               : corpus_.months().back();
  std::string id;
  {
    std::lock_guard lock(job_mu_);
    if (retrain_running_) return error(409, "retrain_running", "a retrain job is already running");
    retrain_running_ = true;
    id = "job-" + std::to_string(++job_counter_);
    jobs_[id] = {{"job_id", id}, {"status", "running"}, {"cutoff", format_month(cutoff)}};
    workers_.emplace_back([this, id, cutoff] { run_retrain(id, cutoff); });
  }
  const auto d = deployment();
  auto resp = ok({{"job_id", id}, {"status", "running"}}, *d);
  resp.status = 202;
  return resp;
}

void ReviewService::run_retrain(std::string job_id, Month cutoff) {
  nlohmann::json result{{"job_id", job_id}, {"cutoff", format_month(cutoff)}};
  try {
    const auto fm = prepare_features(corpus_, store_->records(), cutoff, config_);
    const auto bundle = train_bundle(fm, config_.train, cutoff);
    const auto report = evaluate_models(bundle.pointers(), fm, config_.threshold);
    registry_->publish(bundle);
    auto next = build_deployment(bundle);
    // Re-score the months the previous version had scored, then swap.
    const auto prev = deployment();
    for (const auto& [ord, run] : prev->runs) {
      next->runs[ord] = std::make_shared<const ScoringRun>(score_month(*next->bundle, *next->fm, run->month));
      next->latest_month = run->month;
    }
    result["previous_version"] = prev->bundle->version;
    result["model_version"] = bundle.version;
    result["evaluation"] = report.to_json();
    result["status"] = "succeeded";
    publish(std::move(next));
  } catch (const std::exception& e) {
    result["status"] = "failed";
    result["error"] = e.what();
  }
  std::lock_guard lock(job_mu_);
  jobs_[job_id] = result;
  retrain_running_ = false;
  job_cv_.notify_all();
}

Response ReviewService::job(const std::string& id) {
  const auto d = deployment();
  std::lock_guard lock(job_mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return error(404, "unknown_job", "no job " + id);
  return ok(it->second, *d);
}

void ReviewService::start_monitoring(std::shared_ptr<const Deployment> d) {
  std::lock_guard lock(job_mu_);
  if (monitoring_running_) return;
  if (monitoring_.contains("model_version") && monitoring_["model_version"] == d->bundle->version &&
      monitoring_.value("month", "") == format_month(*d->latest_month)) {
    return;
  }
  monitoring_running_ = true;
  workers_.emplace_back([this, d] {
    nlohmann::json summary;
    try {
      summary = monitoring_summary(*d->bundle, *d->fm, *d->latest_month, config_);
      summary["status"] = "ready";
    } catch (const std::exception& e) {
      summary = {{"status", "failed"}, {"error", e.what()}};
    }
    summary["model_version"] = d->bundle->version;
    summary["month"] = format_month(*d->latest_month);
    std::lock_guard inner(job_mu_);
    monitoring_ = summary;
    monitoring_running_ = false;
    job_cv_.notify_all();
  });
}

Response ReviewService::monitoring() {
  const auto d = deployment();
  std::lock_guard lock(job_mu_);
  if (monitoring_.is_null()) {
    return ok({{"status", config_.service.monitoring ? "pending" : "disabled"}}, *d);
  }
  auto body = monitoring_;
  const bool stale = body.value("model_version", "") != d->bundle->version;
  if (stale) body["status"] = monitoring_running_ ? "pending" : "stale";
  body["monitored_version"] = body.value("model_version", "");
  return ok(body, *d);
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t instrument_bucket(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace

nlohmann::json monitoring_summary(const ModelBundle& bundle, const FeatureMatrix& fm, Month latest,
                                  const Config& config) {
  std::vector<Month> months;
  for (const auto& m : fm.months) {
    if (month_ordinal(m) <= month_ordinal(latest) &&
        std::find(months.begin(), months.end(), m) == months.end()) {
      months.push_back(m);
    }
  }
  std::sort(months.begin(), months.end(), [](Month a, Month b) { return month_ordinal(a) < month_ordinal(b); });
  // Training-period rows, split by instrument: the ensemble is fitted on one
  // part and the alarm baseline measured on the other (in-sample rows would
  // understate the spread).
  std::vector<std::size_t> reference, held_out;
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    if (fm.split[i] != SplitTag::train || month_ordinal(fm.months[i]) >= month_ordinal(latest)) continue;
    (instrument_bucket(fm.instrument_ids[i]) % 4 == 0 ? held_out : reference).push_back(i);
  }
  const auto latest_rows = strided_sample(fm.rows_in_month(latest), config.service.monitoring_rows);
  nlohmann::json types = nlohmann::json::object();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto type = kAllExceptionTypes[t];
    const auto& model = bundle.models[t];
    nlohmann::json entry;
    if (months.size() >= config.drift.window + 1) {
      std::vector<DenseMatrix> batches;
      for (auto m : months) batches.push_back(fm.view(type, strided_sample(fm.rows_in_month(m), config.drift_rows_per_month)));
      const auto report = shap_drift(model, batches, months, fm.schema(type).names(), config.drift);
      entry["drift"] = {{"alarms", report.alarms_json()}, {"flag_count", report.flag_count()}};
    } else {
      entry["drift"] = {{"alarms", nlohmann::json::array()}, {"flag_count", 0}, {"note", "not enough months"}};
    }
    const auto train_rows = strided_sample(reference, 10000);
    std::vector<std::uint8_t> y;
    for (auto i : train_rows) y.push_back(fm.labels[t][i]);
    const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
    if (both && !latest_rows.empty() && !held_out.empty()) {
      TrainParams p = bundle.params;
      p.n_rounds = std::max<int>(1, static_cast<int>(model.trees.size()));
      const auto ensemble = fit_bootstrap_ensemble(fm.view(type, train_rows), y, config.bootstrap_b, p,
                                                   model.schema_hash, mix_seed(p.seed, t));
      const auto ref = uncertainty(ensemble, fm.view(type, strided_sample(held_out, 2000)));
      const auto cur = uncertainty(ensemble, fm.view(type, latest_rows));
      const double baseline = uncertainty_baseline(ref, latest_rows.size(), 0.99, 500, mix_seed(p.seed, 100 + t));
      const double m = mean_std(cur);
      entry["uncertainty"] = {{"mean_std", m}, {"baseline_q99", baseline}, {"alarm", m > baseline},
                              {"b", config.bootstrap_b}, {"rows", latest_rows.size()}};
    } else {
      entry["uncertainty"] = {{"note", "labels lack both classes"}};
    }
    types[std::string(to_string(type))] = entry;
  }
  return {{"types", types}};
}

// ---------------------------------------------------------------------------
// HTTP adapter
// ---------------------------------------------------------------------------

HttpServer::HttpServer(ReviewService& service, bool log_requests)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Request r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.params[k] = v;
    const auto out = service_.handle(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server_->Get(R"(/.*)", handler);
  server_->Post(R"(/.*)", handler);
  if (log_requests) {
    server_->set_logger([](const httplib::Request& req, const httplib::Response& res) {
      std::clog << nlohmann::json{{"method", req.method}, {"path", req.path}, {"status", res.status}}.dump() << '\n';
    });
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host.c_str());
    if (bound < 0) throw StorageError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host.c_str(), port)) throw StorageError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace dqloop
