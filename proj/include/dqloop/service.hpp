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

// Review service: ranked queue, explanations, counterfactuals, exemplars,
// feedback, retraining and monitoring. `ReviewService::handle` is the whole
// API; `HttpServer` only adapts it to HTTP.

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "dqloop/config.hpp"
#include "dqloop/explain.hpp"
#include "dqloop/monitor.hpp"
#include "dqloop/pipeline.hpp"
#include "dqloop/store.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace dqloop {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> params;
  std::string body;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

enum class ReviewState : std::uint8_t { open, confirmed, corrected };
std::string_view to_string(ReviewState s);

struct ItemId {
  ExceptionType type = ExceptionType::AmountOutstanding;
  std::string instrument_id;
  Month month{};

  std::string str() const;
};
// "<Type>:<instrument_id>:<YYYY-MM>"; throws InvalidArgument.
ItemId parse_item_id(const std::string& text);

// Immutable serving state of one model version.
struct Deployment {
  std::shared_ptr<const ModelBundle> bundle;
  std::shared_ptr<const FeatureMatrix> fm;
  std::unordered_map<std::string, std::size_t> row_index;  // row_key -> fm row
  std::map<int, std::shared_ptr<const ScoringRun>> runs;   // by month ordinal
  std::optional<Month> latest_month;

  std::optional<std::size_t> row(const std::string& instrument_id, Month m) const;
};

using Clock = std::function<std::string(const ItemId&)>;

class ReviewService {
 public:
  // The registry must hold an active version. `clock` stamps audit records
  // (defaults to the current UTC time).
  ReviewService(Config config, Corpus corpus, std::shared_ptr<AuditStore> store,
                std::shared_ptr<ModelRegistry> registry, Clock clock = {});
  ~ReviewService();

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  Response handle(const Request& request);

  // Blocks until no retrain or monitoring job is running.
  void wait_idle();
  std::shared_ptr<const Deployment> deployment() const;
  ReviewState state(const std::string& item) const;

 private:
  Response route(const Request& r);
  Response health();
  Response queue(const Request& r);
  Response explain(const Request& r, const std::string& item);
  Response counterfactual(const Request& r, const std::string& item);
  Response exemplars(const Request& r, const std::string& item);
  Response feedback(const Request& r);
  Response retrain(const Request& r);
  Response job(const std::string& id);
  Response monitoring();
  Response score(const Request& r);

  // Resolves ?model_version; returns an error response when stale/unknown.
  std::optional<Response> check_version(const Request& r, const Deployment& d) const;
  Response error(int status, const std::string& code, const std::string& message,
                 nlohmann::json extra = nlohmann::json::object()) const;
  Response ok(nlohmann::json body, const Deployment& d) const;

  std::shared_ptr<Deployment> build_deployment(const ModelBundle& bundle) const;
  void publish(std::shared_ptr<Deployment> d);
  const MutabilityPolicy& policy(const Deployment& d, ExceptionType type);
  void start_monitoring(std::shared_ptr<const Deployment> d);
  void run_retrain(std::string job_id, Month cutoff);

  Config config_;
  Corpus corpus_;
  std::shared_ptr<AuditStore> store_;
  std::shared_ptr<ModelRegistry> registry_;
  Clock clock_;

  mutable std::mutex deploy_mu_;
  std::shared_ptr<const Deployment> current_;

  std::mutex feedback_mu_;
  std::unordered_map<std::string, std::pair<ReviewState, std::uint64_t>> reviews_;

  std::mutex policy_mu_;
  std::map<std::string, std::unique_ptr<MutabilityPolicy>> policies_;  // version|type

  std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::map<std::string, nlohmann::json> jobs_;
  std::size_t job_counter_ = 0;
  bool retrain_running_ = false;
  bool monitoring_running_ = false;
  nlohmann::json monitoring_;
  std::vector<std::thread> workers_;
};

// Monitoring summary for one deployment: per-type drift of mean |SHAP| over
// the months up to the latest, and bootstrap uncertainty of the latest month
// against an in-distribution baseline.
nlohmann::json monitoring_summary(const ModelBundle& bundle, const FeatureMatrix& fm, Month latest,
                                  const Config& config);

class HttpServer {
 public:
  explicit HttpServer(ReviewService& service, bool log_requests = true);
  ~HttpServer();

  // Port 0 binds an ephemeral port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  ReviewService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace dqloop
