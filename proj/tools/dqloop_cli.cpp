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

// dqloop command line: generate, featurize, train, evaluate, rank, explain,
// copy, monitor, serve and the end-to-end feedback-loop demo.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "dqloop/config.hpp"
#include "dqloop/datagen.hpp"
#include "dqloop/explain.hpp"
#include "dqloop/features.hpp"
#include "dqloop/metrics.hpp"
#include "dqloop/monitor.hpp"
#include "dqloop/pipeline.hpp"
#include "dqloop/rank.hpp"
#include "dqloop/service.hpp"
#include "dqloop/store.hpp"
#include "httplib.h"

namespace fs = std::filesystem;
using namespace dqloop;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<double> threshold;
  std::optional<double> signal_strength;
  // Subcommand specifics.
  std::string month;
  std::string item;
  std::size_t top = 3;
  std::size_t corrections = 200;
  bool quiet = false;
};

class Run {
 public:
  Run(std::string command, const Options& o) : command_(std::move(command)), opt_(o) {
    config_ = load_config(o.config_path.empty() ? std::nullopt : std::optional<fs::path>(o.config_path));
    if (o.seed) {
      config_.gen.seed = *o.seed;
      config_.features.seed = *o.seed;
      config_.train.seed = *o.seed;
      config_.counterfactual.seed = *o.seed;
    }
    if (o.threshold) config_.threshold = *o.threshold;
    if (o.signal_strength) config_.gen.signal_strength = *o.signal_strength;
    config_.validate();
    out_ = o.out_dir;
    fs::create_directories(out_);
    start_ = std::chrono::steady_clock::now();
  }

  Config& config() { return config_; }
  const fs::path& out() const { return out_; }
  fs::path path(const std::string& name) const { return out_ / name; }

  void artifact(const std::string& name) { artifacts_[name] = sha256_file(path(name).string()); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream f(path(name), std::ios::binary | std::ios::trunc);
    if (!f) throw StorageError("cannot write " + path(name).string());
    f << text;
    f.close();
    artifact(name);
  }
  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  void phase(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    timings_[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

  void finish() {
    phase("total_tail");
    nlohmann::json t = timings_;
    t["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const nlohmann::json manifest{{"command", command_},
                                  {"schema_version", kSchemaVersion},
                                  {"config_hash", config_.hash()},
                                  {"config", config_.to_json()},
                                  {"seed", config_.gen.seed},
                                  {"module_versions", {{"dqloop", kVersion}, {"model_format", kModelFormatVersion}}},
                                  {"artifacts", artifacts_},
                                  {"timings_seconds", t}};
    std::ofstream f(path("manifest_" + command_ + ".json"), std::ios::binary | std::ios::trunc);
    f << manifest.dump(2) << "\n";
  }

 private:
  std::string command_;
  Options opt_;
  Config config_;
  fs::path out_;
  std::map<std::string, std::string> artifacts_;
  std::map<std::string, double> timings_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::clog << msg << '\n';
}

// ---------------------------------------------------------------------------
// Shared steps
// ---------------------------------------------------------------------------

struct Data {
  Corpus corpus;
  std::vector<AuditRecord> audits;
};

Data load_data(const Run& run) {
  const auto corpus_path = run.path("corpus.jsonl");
  if (!fs::exists(corpus_path)) throw InvalidArgument("missing " + corpus_path.string() + "; run gen first");
  Data d;
  d.corpus = read_corpus_jsonl(corpus_path);
  d.audits = read_framed_file(run.path("audits.log"));
  return d;
}

GroundTruth load_truth(const Run& run) {
  const auto p = run.path("truth.jsonl");
  if (!fs::exists(p)) throw InvalidArgument("missing " + p.string() + "; run gen first");
  return read_truth_jsonl(p);
}

ModelBundle active_bundle(const Run& run) {
  ModelRegistry registry(run.path("models"));
  const auto v = registry.active();
  if (!v) throw InvalidArgument("no trained model in " + run.path("models").string() + "; run train first");
  return registry.load(*v);
}

Month last_month(const Corpus& c) { return c.months().back(); }

Month month_option(const Options& o, const Corpus& c) {
  return o.month.empty() ? last_month(c) : parse_month(o.month);
}

void gen_into(Run& run, const GenConfig& gen) {
  const auto universe = generate_universe(gen);
  const auto injected = inject_exceptions(universe, gen);
  write_corpus_jsonl(injected.corpus, run.path("corpus.jsonl"));
  run.artifact("corpus.jsonl");
  write_corpus_csv(injected.corpus, run.path("corpus.csv"));
  run.artifact("corpus.csv");
  write_truth_jsonl(injected.truth, run.path("truth.jsonl"));
  run.artifact("truth.jsonl");
  write_framed_file(run.path("audits.log"), injected.audit_log);
  run.artifact("audits.log");
  export_audit_csv(injected.audit_log, run.path("audits.csv"));
  run.artifact("audits.csv");
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen(const Options& o) {
  Run run("gen", o);
  gen_into(run, run.config().gen);
  run.phase("generate");
  run.finish();
  return 0;
}

int cmd_featurize(const Options& o) {
  Run run("featurize", o);
  const auto data = load_data(run);
  const auto fm = prepare_features(data.corpus, data.audits, last_month(data.corpus), run.config());
  run.phase("featurize");
  write_matrix_csv(fm, run.path("features.csv"));
  run.artifact("features.csv");
  run.write_json("features_schema.json", schema_json(fm, run.config().features));
  run.finish();
  return 0;
}

int cmd_train(const Options& o) {
  Run run("train", o);
  const auto data = load_data(run);
  const Month cutoff = month_option(o, data.corpus);
  const auto fm = prepare_features(data.corpus, data.audits, cutoff, run.config());
  run.phase("featurize");
  const auto bundle = train_bundle(fm, run.config().train, cutoff);
  run.phase("train");
  ModelRegistry registry(run.path("models"));
  registry.publish(bundle);
  for (const auto& f : fs::directory_iterator(run.path("models") / bundle.version)) {
    run.artifact("models/" + bundle.version + "/" + f.path().filename().string());
  }
  nlohmann::json rounds = nlohmann::json::object();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    rounds[std::string(to_string(kAllExceptionTypes[t]))] = bundle.models[t].trees.size();
  }
  run.write_json("train_summary.json", {{"model_version", bundle.version},
                                        {"cutoff", format_month(cutoff)},
                                        {"params", bundle.params.to_json()},
                                        {"trees", rounds},
                                        {"rows", fm.rows()}});
  log(o, "trained " + bundle.version);
  run.finish();
  return 0;
}

int cmd_evaluate(const Options& o) {
  Run run("evaluate", o);
  const auto data = load_data(run);
  const auto bundle = active_bundle(run);
  const auto fm = prepare_features(data.corpus, data.audits, bundle.cutoff, run.config());
  run.phase("featurize");
  const auto report = evaluate_models(bundle.pointers(), fm, run.config().threshold);
  const auto ndcg = evaluate_ndcg(bundle, fm, true, false, run.config().threshold);
  const auto ndcg_flagged = evaluate_ndcg(bundle, fm, true, true, run.config().threshold);
  run.phase("evaluate");
  run.write("detection_full.csv", detection_csv(report.full));
  run.write("detection_gold.csv", detection_csv(report.gold));
  run.write("ndcg_gold.csv", ndcg_csv(ndcg));
  run.write("ndcg_gold_flagged.csv", ndcg_csv(ndcg_flagged));
  auto j = report.to_json();
  j["model_version"] = bundle.version;
  j["ndcg_gold"] = ndcg_json(ndcg);
  j["ndcg_gold_flagged"] = ndcg_json(ndcg_flagged);
  run.write_json("evaluation.json", j);
  if (!o.quiet) std::cout << detection_csv(report.full);
  run.finish();
  return 0;
}

int cmd_rank(const Options& o) {
  Run run("rank", o);
  const auto data = load_data(run);
  const auto bundle = active_bundle(run);
  const auto fm = serving_matrix(data.corpus, bundle);
  const Month month = month_option(o, data.corpus);
  const auto scored = score_month(bundle, fm, month);
  run.phase("score");
  std::string csv = "exception_type,position,instrument_id,ref_month,probability,amount_outstanding,rank_score\n";
  nlohmann::json queues = nlohmann::json::object();
  for (const auto type : alphabetical_types()) {
    const auto& q = scored.queues[index_of(type)];
    nlohmann::json items = nlohmann::json::array();
    for (const auto& e : q) {
      csv += std::string(to_string(type)) + ',' + std::to_string(e.position) + ',' + e.instrument_id + ',' +
             format_month(e.ref_month) + ',' + format_double(e.probability) + ',' +
             format_double(e.amount_outstanding) + ',' + format_double(e.rank_score) + '\n';
      if (items.size() < run.config().service.queue_limit) items.push_back(e.to_json());
    }
    queues[std::string(to_string(type))] = items;
  }
  run.write("queue.csv", csv);
  run.write_json("queue.json", {{"run_id", scored.run_id},
                                {"model_version", bundle.version},
                                {"month", format_month(month)},
                                {"queues", queues}});
  run.finish();
  return 0;
}

int cmd_explain(const Options& o) {
  Run run("explain", o);
  const auto data = load_data(run);
  const auto bundle = active_bundle(run);
  const auto fm = prepare_features(data.corpus, data.audits, bundle.cutoff, run.config());
  const auto serving = serving_matrix(data.corpus, bundle);
  const Month month = month_option(o, data.corpus);
  const auto scored = score_month(bundle, serving, month);
  run.phase("score");

  // Global importance on test rows.
  std::string global_csv = "exception_type,rank,feature,mean_abs_shap\n";
  const auto test = fm.rows_with(SplitTag::test);
  std::vector<std::size_t> sample;
  for (std::size_t k = 0; k < test.size() && sample.size() < 1000; k += std::max<std::size_t>(1, test.size() / 1000)) {
    sample.push_back(test[k]);
  }
  for (const auto type : alphabetical_types()) {
    const auto g = shap_global(bundle.model(type), fm.view(type, sample));
    const auto order = importance_order(g);
    const auto names = fm.schema(type).names();
    for (std::size_t r = 0; r < std::min<std::size_t>(order.size(), 15); ++r) {
      global_csv += std::string(to_string(type)) + ',' + std::to_string(r + 1) + ',' + names[order[r]] + ',' +
                    format_double(g[order[r]]) + '\n';
    }
  }
  run.write("shap_global.csv", global_csv);
  run.phase("global");

  // Local explanations, counterfactuals and exemplars for the top items.
  std::vector<ItemId> items;
  if (!o.item.empty()) {
    items.push_back(parse_item_id(o.item));
  } else {
    for (const auto type : alphabetical_types()) {
      const auto& q = scored.queues[index_of(type)];
      for (std::size_t k = 0; k < std::min(o.top, q.size()); ++k) items.push_back({type, q[k].instrument_id, month});
    }
  }
  std::map<std::string, MutabilityPolicy> policies;
  nlohmann::json out = nlohmann::json::array();
  for (const auto& id : items) {
    const auto row = serving.find(id.instrument_id, id.month);
    if (!row) throw InvalidArgument("no record for " + id.str());
    const auto& model = bundle.model(id.type);
    const auto x = serving.row_view(id.type, *row);
    auto a = shap_local(model, x);
    a.row_id = id.str();
    a.model_id = bundle.version + "/" + std::string(to_string(id.type));
    const std::string tname(to_string(id.type));
    if (!policies.count(tname)) policies.emplace(tname, make_policy(fm, id.type));
    auto cf_opt = run.config().counterfactual;
    cf_opt.threshold = run.config().threshold;
    const auto cf = find_counterfactuals(model, x, policies.at(tname), cf_opt);
    auto cf_json = cf.to_json();
    for (auto& c : cf_json["counterfactuals"]) c.erase("row");
    // Exemplars among labeled train rows.
    const auto train = fm.rows_with(SplitTag::train);
    std::vector<std::size_t> cand;
    for (std::size_t k = 0; k < train.size(); k += std::max<std::size_t>(1, train.size() / 4000)) cand.push_back(train[k]);
    const auto t = index_of(id.type);
    for (auto i : train) {
      if (fm.labels[t][i] && std::find(cand.begin(), cand.end(), i) == cand.end()) cand.push_back(i);
    }
    const DenseMatrix rows = fm.view(id.type, cand);
    std::vector<std::uint8_t> labels;
    for (auto i : cand) labels.push_back(fm.labels[t][i]);
    const GowerMetric metric(rows, categorical_mask(fm.schema(id.type)));
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : nearest_exemplars(x, rows, labels, metric, run.config().exemplars_k)) {
      ex.push_back({{"instrument_id", fm.instrument_ids[cand[e.row]]},
                    {"ref_month", format_month(fm.months[cand[e.row]])},
                    {"distance", e.distance},
                    {"label", e.label}});
    }
    out.push_back({{"item", id.str()},
                   {"attribution", a.to_json(serving.schema(id.type).names())},
                   {"counterfactuals", cf_json},
                   {"exemplars", ex}});
  }
  run.phase("local");
  run.write_json("explanations.json", {{"model_version", bundle.version}, {"month", format_month(month)}, {"items", out}});
  run.finish();
  return 0;
}

int cmd_copy(const Options& o) {
  Run run("copy", o);
  const auto data = load_data(run);
  const auto bundle = active_bundle(run);
  const auto fm = prepare_features(data.corpus, data.audits, bundle.cutoff, run.config());
  const auto train = fm.rows_with(SplitTag::train);
  const auto valid = fm.rows_with(SplitTag::validation);
  const auto test = fm.rows_with(SplitTag::test);
  std::vector<CopyComparison> rows;
  for (const auto type : alphabetical_types()) {
    const auto t = index_of(type);
    const auto pool = fm.view(type, train);
    const auto holdout = fm.view(type, valid);
    const auto xt = fm.view(type, test);
    std::vector<std::uint8_t> yt;
    for (auto i : test) yt.push_back(fm.labels[t][i]);
    CopyComparison c;
    c.type = type;
    c.tree = copy_model(bundle.models[t], pool, SimpleKind::tree, holdout, xt, yt, run.config().copy_tree,
                        run.config().threshold);
    c.glm = copy_model(bundle.models[t], pool, SimpleKind::glm, holdout, xt, yt, run.config().copy_glm,
                       run.config().threshold);
    rows.push_back(std::move(c));
    run.phase(std::string(to_string(type)));
  }
  run.write("copy_report.csv", copy_csv(rows));
  run.write_json("copy_report.json", {{"model_version", bundle.version}, {"types", copy_json(rows)}});
  run.finish();
  return 0;
}

int cmd_monitor(const Options& o) {
  Run run("monitor", o);
  const auto data = load_data(run);
  const auto bundle = active_bundle(run);
  auto fm = serving_matrix(data.corpus, bundle);
  const auto labels = labels_for(data.corpus, data.audits, bundle.cutoff, run.config().assemble);
  const auto split = fm.split;
  attach_labels(fm, labels);
  fm.split = split;
  const Month month = month_option(o, data.corpus);
  auto summary = monitoring_summary(bundle, fm, month, run.config());
  summary["model_version"] = bundle.version;
  summary["month"] = format_month(month);
  run.phase("monitor");
  run.write_json("monitoring.json", summary);
  run.finish();
  return 0;
}

std::atomic<HttpServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const Options& o) {
  Run run("serve", o);
  const auto& svc = run.config().service;
  const fs::path data_dir = svc.data_dir.empty() ? run.path("") : svc.data_dir;
  const fs::path model_dir = svc.model_dir.empty() ? run.path("models") : svc.model_dir;
  const auto corpus_path = data_dir / "corpus.jsonl";
  if (!fs::exists(corpus_path)) throw InvalidArgument("missing " + corpus_path.string() + "; run gen first");
  Data data{read_corpus_jsonl(corpus_path), {}};
  auto store = std::make_shared<AuditStore>(data_dir / "audits.log");
  auto registry = std::make_shared<ModelRegistry>(model_dir);
  ReviewService service(run.config(), std::move(data.corpus), store, registry);
  HttpServer server(service, !o.quiet);
  const int port = server.bind(run.config().service.host, run.config().service.port);
  log(o, "listening on " + run.config().service.host + ":" + std::to_string(port));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  run.finish();
  return 0;
}

// Scripted reviewer: plants stale amounts, lets the reviewer correct some of
// them through the HTTP API, retrains and compares detection of the pattern.
int cmd_loop_demo(const Options& o) {
  Run run("loop-demo", o);
  auto& cfg = run.config();
  if (cfg.gen.planted_rate <= 0) cfg.gen.planted_rate = 0.011;
  cfg.service.monitoring = false;
  const auto started = std::chrono::steady_clock::now();

  gen_into(run, cfg.gen);
  auto data = load_data(run);
  const auto truth = load_truth(run);
  const Month cutoff = last_month(data.corpus);
  run.phase("generate");

  // Fresh registry and audit store for the demo.
  const auto models_dir = run.path("loop_models");
  if (fs::exists(models_dir / "registry.json")) fs::remove_all(models_dir);
  const auto initial_fm = prepare_features(data.corpus, data.audits, cutoff, cfg);
  const auto initial = train_bundle(initial_fm, cfg.train, cutoff);
  auto registry = std::make_shared<ModelRegistry>(models_dir);
  registry->publish(initial);
  run.phase("initial_train");

  // Planted truth rows in train and test months.
  const auto ao = ExceptionType::AmountOutstanding;
  std::vector<const GroundTruthEntry*> train_planted, test_planted;
  for (const auto& e : truth.entries) {
    if (e.kind != CorruptionKind::planted || e.type != ao) continue;
    const auto row = initial_fm.find(e.instrument_id, e.ref_month);
    if (!row) continue;
    if (initial_fm.split[*row] == SplitTag::train) train_planted.push_back(&e);
    if (initial_fm.split[*row] == SplitTag::test) test_planted.push_back(&e);
  }
  if (test_planted.empty()) throw InvalidArgument("no planted errors in test months");

  auto planted_recall = [&](const ModelBundle& b) {
    const auto fm = serving_matrix(data.corpus, b);
    std::size_t hit = 0;
    for (const auto* e : test_planted) {
      const auto row = fm.find(e->instrument_id, e->ref_month);
      hit += b.model(ao).predict_proba(fm.row_view(ao, *row)) >= cfg.threshold;
    }
    return static_cast<double>(hit) / static_cast<double>(test_planted.size());
  };
  const double before = planted_recall(initial);

  const auto audit_path = run.path("loop_audits.log");
  write_framed_file(audit_path, data.audits);
  auto store = std::make_shared<AuditStore>(audit_path);
  auto clock = [](const ItemId& id) { return format_date(month_end(id.month)) + "T12:00:00Z"; };
  ReviewService service(cfg, data.corpus, store, registry, clock);
  HttpServer server(service, false);
  const int port = server.bind("127.0.0.1", 0);
  std::thread listener([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(600, 0);
  auto post = [&](const std::string& path, const nlohmann::json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw StorageError("request to " + path + " failed");
    return std::make_pair(res->status, nlohmann::json::parse(res->body));
  };

  std::size_t sent = 0;
  std::set<int> scored;
  for (const auto* e : train_planted) {
    if (sent >= o.corrections) break;
    if (scored.insert(month_ordinal(e->ref_month)).second) {
      const auto [status, body] = post("/score", {{"month", format_month(e->ref_month)}});
      if (status != 200) throw InvalidArgument("score failed: " + body.dump());
    }
    const std::string item = ItemId{ao, e->instrument_id, e->ref_month}.str();
    const auto [status, body] = post("/feedback", {{"item", item},
                                                   {"action", "correct"},
                                                   {"field", e->corrupted_field},
                                                   {"new_value", e->clean_value},
                                                   {"actor", "scripted-reviewer"}});
    if (status != 200) throw InvalidArgument("feedback failed: " + body.dump());
    ++sent;
  }
  run.phase("feedback");

  const auto [rs, rbody] = post("/retrain", {{"cutoff", format_month(cutoff)}});
  if (rs != 202) throw InvalidArgument("retrain failed: " + rbody.dump());
  const std::string job = rbody.at("job_id");
  nlohmann::json job_state;
  for (;;) {
    auto res = client.Get("/jobs/" + job);
    if (!res) throw StorageError("job poll failed");
    job_state = nlohmann::json::parse(res->body);
    if (job_state.value("status", "") != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  server.stop();
  listener.join();
  if (job_state.value("status", "") != "succeeded") throw InvalidArgument("retrain job failed: " + job_state.dump());
  run.phase("retrain");

  const auto retrained = registry->load(job_state.at("model_version").get<std::string>());
  const double after = planted_recall(retrained);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  run.write_json("loop_demo.json", {{"planted_train", train_planted.size()},
                                    {"planted_test", test_planted.size()},
                                    {"corrections", sent},
                                    {"initial_version", initial.version},
                                    {"retrained_version", retrained.version},
                                    {"recall_before", before},
                                    {"recall_after", after},
                                    {"recall_gain", after - before}});
  if (!o.quiet) {
    std::cout << "planted-pattern recall " << format_fixed(before, 3) << " -> " << format_fixed(after, 3) << " in "
              << format_fixed(elapsed, 1) << "s\n";
  }
  run.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dqloop: exception detection and review loop for securities master data"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "Config file (TOML subset)")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed (overrides config seeds)");
  app.add_option("--out-dir", o.out_dir, "Artifact directory")->capture_default_str();
  app.add_option("--threshold", o.threshold, "Decision threshold (default 0.5)");
  app.add_option("--signal-strength", o.signal_strength, "Share of learnable corruptions (default 1.0)");
  app.add_flag("--quiet", o.quiet, "Suppress progress output");
  app.set_version_flag("--version", kVersion);

  std::map<std::string, std::function<int(const Options&)>> commands;
  auto add = [&](const std::string& name, const std::string& help, auto fn) {
    commands[name] = fn;
    return app.add_subcommand(name, help);
  };
  add("gen", "Generate the synthetic corpus, ground truth and audit log", cmd_gen);
  add("featurize", "Write the feature matrix and schema", cmd_featurize);
  add("train", "Train per-type models and the meta-classifier", cmd_train)
      ->add_option("--month", o.month, "Training cutoff month (YYYY-MM, default last)");
  add("evaluate", "Detection and ranking reports on the test split", cmd_evaluate);
  add("rank", "Score one month and write the review queues", cmd_rank)
      ->add_option("--month", o.month, "Month to score (YYYY-MM, default last)");
  auto* ex = add("explain", "Global importance, local attributions, counterfactuals, exemplars", cmd_explain);
  ex->add_option("--month", o.month, "Month to explain (YYYY-MM, default last)");
  ex->add_option("--item", o.item, "Single item <Type>:<instrument>:<YYYY-MM>");
  ex->add_option("--top", o.top, "Items per type when no --item is given")->capture_default_str();
  add("copy", "Tree and logistic copies of each model", cmd_copy);
  add("monitor", "Drift and bootstrap-uncertainty summary", cmd_monitor)
      ->add_option("--month", o.month, "Month to monitor (YYYY-MM, default last)");
  add("serve", "Run the review HTTP service", cmd_serve);
  add("loop-demo", "Scripted review loop: plant, correct via HTTP, retrain, compare", cmd_loop_demo)
      ->add_option("--corrections", o.corrections, "Corrections to submit")->capture_default_str();
  auto* defaults = app.add_subcommand("defaults", "Print the default configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (defaults->parsed()) {
      std::cout << default_config_text();
      return 0;
    }
    return commands.at(name)(o);
  } catch (const std::exception& e) {
    std::string kind = "error";
    if (dynamic_cast<const InvalidArgument*>(&e)) kind = "invalid_argument";
    if (dynamic_cast<const StorageError*>(&e)) kind = "storage";
    if (dynamic_cast<const SchemaMismatch*>(&e)) kind = "schema_mismatch";
    if (dynamic_cast<const CorruptPayload*>(&e)) kind = "corrupt_payload";
    if (dynamic_cast<const VersionMismatch*>(&e)) kind = "version_mismatch";
    std::cerr << nlohmann::json{{"error", {{"command", name}, {"kind", kind}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}
