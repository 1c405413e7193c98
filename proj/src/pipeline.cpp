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

#include "dqloop/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dqloop {

TrainingLabels labels_for(const Corpus& corpus, const std::vector<AuditRecord>& audits, Month cutoff,
                          const AssembleOptions& options) {
  auto known = [&](const std::string& id, Month m) { return corpus.find(id, m).has_value(); };
  return assemble_training(known, audits, cutoff, options);
}

Corpus truncate_corpus(const Corpus& corpus, Month cutoff) {
  Corpus out;
  out.first_month = corpus.first_month;
  out.registry = corpus.registry;
  const int last = month_ordinal(cutoff);
  const int first = month_ordinal(corpus.first_month);
  out.n_months = static_cast<std::size_t>(std::clamp(last - first + 1, 0, static_cast<int>(corpus.n_months)));
  for (const auto& s : corpus.snapshots) {
    if (month_ordinal(s.ref_month) <= last) out.snapshots.push_back(s);
  }
  out.rebuild_index();
  return out;
}

FeatureMatrix prepare_features(const Corpus& corpus, const std::vector<AuditRecord>& audits, Month cutoff,
                               const Config& config) {
  const Corpus visible = truncate_corpus(corpus, cutoff);
  const auto labels = labels_for(visible, audits, cutoff, config.assemble);
  return featurize(visible, labels, config.features);
}

std::array<const GbmModel*, kNumExceptionTypes> ModelBundle::pointers() const {
  std::array<const GbmModel*, kNumExceptionTypes> out{};
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) out[t] = &models[t];
  return out;
}

std::size_t meta_target(const FeatureMatrix& fm, std::size_t row) {
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    if (fm.labels[t][row]) return t;
  }
  return kNominalClass;
}

ModelBundle train_bundle(const FeatureMatrix& fm, const TrainParams& params, Month cutoff) {
  params.validate();
  const auto train = fm.rows_with(SplitTag::train);
  const auto valid = fm.rows_with(SplitTag::validation);
  if (train.empty()) throw InvalidArgument("no train rows");
  ModelBundle b;
  b.cutoff = cutoff;
  b.params = params;
  b.base_features = fm.base_schema.names();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto type = kAllExceptionTypes[t];
    const auto hash = fm.schema(type).hash();
    const DenseMatrix x = fm.view(type, train);
    std::vector<std::uint8_t> y;
    for (auto i : train) y.push_back(fm.labels[t][i]);
    if (valid.empty()) {
      b.models[t] = train_gbm(x, y, params, hash);
    } else {
      const DenseMatrix xv = fm.view(type, valid);
      std::vector<std::uint8_t> yv;
      for (auto i : valid) yv.push_back(fm.labels[t][i]);
      b.models[t] = train_gbm(x, y, params, hash, &xv, &yv);
    }
    b.encoders[t] = fm.encoders[t];
  }
  const auto& meta_rows = valid.empty() ? train : valid;
  DenseMatrix probs(meta_rows.size(), kNumExceptionTypes);
  std::vector<std::size_t> classes;
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto p = b.models[t].predict_proba(fm.view(kAllExceptionTypes[t], meta_rows));
    for (std::size_t k = 0; k < meta_rows.size(); ++k) probs(k, t) = p[k];
  }
  for (auto i : meta_rows) classes.push_back(meta_target(fm, i));
  b.meta = train_meta(probs, classes);
  b.version = bundle_version(b);
  return b;
}

std::string bundle_version(const ModelBundle& bundle) {
  std::string text = format_month(bundle.cutoff);
  for (const auto& m : bundle.models) text += serialize(m);
  text += serialize(bundle.meta);
  for (const auto& enc : bundle.encoders) {
    for (const auto& e : enc) text += e.to_json().dump();
  }
  return "m" + format_month(bundle.cutoff) + "-" + sha256_hex(text).substr(0, 12);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp);
    out << text;
    if (!out) throw StorageError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string model_file(ExceptionType t) { return "model_" + std::string(to_string(t)) + ".json"; }

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json enc = nlohmann::json::object();
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& e : bundle.encoders[t]) cols.push_back(e.to_json());
    enc[std::string(to_string(kAllExceptionTypes[t]))] = cols;
    write_text(dir / model_file(kAllExceptionTypes[t]), serialize(bundle.models[t]));
  }
  write_text(dir / "meta.json", serialize(bundle.meta));
  const nlohmann::json manifest{{"format", "dqloop.bundle"},
                                {"format_version", kModelFormatVersion},
                                {"version", bundle.version},
                                {"cutoff", format_month(bundle.cutoff)},
                                {"params", bundle.params.to_json()},
                                {"base_features", bundle.base_features},
                                {"encoders", enc}};
  write_text(dir / "bundle.json", manifest.dump(1) + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "bundle.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload("bundle.json: " + std::string(e.what()));
  }
  if (j.value("format", "") != "dqloop.bundle") throw CorruptPayload("not a model bundle");
  if (j.value("format_version", 0) != kModelFormatVersion) throw VersionMismatch("unsupported bundle version");
  ModelBundle b;
  try {
    b.version = j.at("version").get<std::string>();
    b.cutoff = parse_month(j.at("cutoff").get<std::string>());
    const auto& p = j.at("params");
    b.params.n_rounds = p.at("n_rounds");
    b.params.max_depth = p.at("max_depth");
    b.params.learning_rate = p.at("learning_rate");
    b.params.min_child_cover = p.at("min_child_cover");
    b.params.l2_leaf_reg = p.at("l2_leaf_reg");
    b.params.early_stopping_patience = p.at("early_stopping_patience");
    b.params.seed = p.at("seed");
    b.base_features = j.at("base_features").get<std::vector<std::string>>();
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
      for (const auto& e : j.at("encoders").at(std::string(to_string(kAllExceptionTypes[t])))) {
        b.encoders[t].push_back(TargetEncoder::from_json(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload("bundle.json: " + std::string(e.what()));
  }
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    b.models[t] = deserialize_gbm(read_text(dir / model_file(kAllExceptionTypes[t])));
  }
  b.meta = deserialize_meta(read_text(dir / "meta.json"));
  if (bundle_version(b) != b.version) throw CorruptPayload("bundle contents do not match version " + b.version);
  return b;
}

ModelRegistry::ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
  const auto index = root_ / "registry.json";
  if (!std::filesystem::exists(index)) return;
  try {
    const auto j = nlohmann::json::parse(read_text(index));
    versions_ = j.at("versions").get<std::vector<std::string>>();
    if (!j.at("active").is_null()) active_ = j.at("active").get<std::string>();
    retired_ = j.at("retired").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload("registry.json: " + std::string(e.what()));
  }
}

void ModelRegistry::save_index() const {
  const nlohmann::json j{{"versions", versions_},
                         {"active", active_ ? nlohmann::json(*active_) : nlohmann::json(nullptr)},
                         {"retired", retired_}};
  write_text(root_ / "registry.json", j.dump(1) + "\n");
}

void ModelRegistry::publish(const ModelBundle& bundle) {
  if (active_ == bundle.version) return;
  if (!contains(bundle.version)) {
    save_bundle(bundle, root_ / bundle.version);
    versions_.push_back(bundle.version);
  }
  retired_.erase(bundle.version);
  if (active_) {
    retired_[*active_] = bundle.version;
    // Older retirements point at the newest version.
    for (auto& [old, next] : retired_) next = bundle.version;
  }
  active_ = bundle.version;
  save_index();
}

std::optional<std::string> ModelRegistry::active() const { return active_; }

bool ModelRegistry::contains(const std::string& version) const {
  return std::find(versions_.begin(), versions_.end(), version) != versions_.end();
}

std::optional<std::string> ModelRegistry::superseded_by(const std::string& version) const {
  if (auto it = retired_.find(version); it != retired_.end()) return it->second;
  return std::nullopt;
}

std::vector<std::string> ModelRegistry::versions() const { return versions_; }

ModelBundle ModelRegistry::load(const std::string& version) const {
  if (!contains(version)) throw InvalidArgument("unknown model version " + version);
  return load_bundle(root_ / version);
}

FeatureMatrix serving_matrix(const Corpus& corpus, const ModelBundle& bundle) {
  FeatureMatrix fm = build_matrix(corpus);
  if (fm.base_schema.names() != bundle.base_features) throw SchemaMismatch("feature schema differs from bundle");
  for (auto& l : fm.labels) l.assign(fm.rows(), 0);
  for (auto& l : fm.label_gold) l.assign(fm.rows(), 0);
  fm.split.resize(fm.rows());
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    fm.split[i] = month_ordinal(fm.months[i]) <= month_ordinal(bundle.cutoff) ? SplitTag::train : SplitTag::test;
  }
  apply_encoders(fm, bundle.encoders);
  return fm;
}

ScoringRun score_month(const ModelBundle& bundle, const FeatureMatrix& fm, Month month) {
  ScoringRun run;
  run.model_version = bundle.version;
  run.month = month;
  run.run_id = bundle.version + "@" + format_month(month);
  run.rows = fm.rows_in_month(month);
  if (run.rows.empty()) throw InvalidArgument("no rows to score in " + format_month(month));
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto type = kAllExceptionTypes[t];
    const DenseMatrix x = fm.view(type, run.rows);
    bundle.models[t].check_schema(fm.schema(type).hash(), x.cols());
    run.probability[t] = bundle.models[t].predict_proba(x);
    std::vector<Prediction> preds;
    preds.reserve(run.rows.size());
    for (std::size_t k = 0; k < run.rows.size(); ++k) {
      const auto i = run.rows[k];
      preds.push_back({fm.instrument_ids[i], month, type, run.probability[t][k], fm.relevance[i]});
    }
    run.queues[t] = rank_queue(preds);
  }
  std::array<double, kNumExceptionTypes> p{};
  for (std::size_t k = 0; k < run.rows.size(); ++k) {
    for (std::size_t t = 0; t < kNumExceptionTypes; ++t) p[t] = run.probability[t][k];
    run.meta_class.push_back(bundle.meta.predict_class(p));
  }
  return run;
}

std::vector<NdcgRow> evaluate_ndcg(const ModelBundle& bundle, const FeatureMatrix& fm, bool gold_only,
                                   bool flagged_only, double threshold) {
  const auto test = fm.rows_with(SplitTag::test);
  std::vector<std::vector<RankedException>> queues;
  std::map<std::string, std::uint8_t> relevance;
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    const auto type = kAllExceptionTypes[t];
    std::vector<std::size_t> pool;
    for (auto i : test) {
      if (!gold_only || fm.gold(type, i)) pool.push_back(i);
    }
    if (pool.empty()) {
      queues.push_back({});
      continue;
    }
    const auto p = bundle.models[t].predict_proba(fm.view(type, pool));
    std::vector<Prediction> preds;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      const auto i = pool[k];
      preds.push_back({fm.instrument_ids[i], fm.months[i], type, p[k], fm.relevance[i]});
      relevance[std::string(to_string(type)) + "|" + row_key(fm.instrument_ids[i], fm.months[i])] = fm.labels[t][i];
    }
    queues.push_back(rank_queue(preds));
  }
  auto relevant = [&](const RankedException& e) {
    const auto it = relevance.find(std::string(to_string(e.type)) + "|" + row_key(e.instrument_id, e.ref_month));
    return it != relevance.end() && it->second != 0;
  };
  auto rows = evaluate_ranking(queues, relevant, kDefaultCutoffs, flagged_only, threshold);
  // Types with an empty pool still report 0 at every cutoff.
  for (std::size_t t = 0; t < kNumExceptionTypes; ++t) {
    if (!queues[t].empty()) continue;
    for (auto k : kDefaultCutoffs) rows.push_back({kAllExceptionTypes[t], k, 0.0, 0, 0});
  }
  return rows;
}

}  // namespace dqloop
