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

#include "dqloop/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace dqloop {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

bool valid_key(const std::string& k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-';
  });
}

}  // namespace

ConfigValues parse_config_text(const std::string& text) {
  ConfigValues out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw InvalidArgument("config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail("unterminated section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      if (!valid_key(section)) fail("bad section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    std::string value = trim(std::string_view(s).substr(eq + 1));
    if (!valid_key(key)) fail("bad key");
    if (value.empty()) fail("missing value");
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') fail("unterminated string");
      value = value.substr(1, value.size() - 2);
    } else if (value.front() == '[' && value.back() != ']') {
      fail("unterminated array");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, value).second) fail("duplicate key " + full);
  }
  return out;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw InvalidArgument("config " + key + ": not a number: " + v);
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidArgument("config " + key + ": not an integer: " + v);
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const auto n = to_int(key, v);
  if (n < 0) throw InvalidArgument("config " + key + ": must be non-negative");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InvalidArgument("config " + key + ": not a boolean: " + v);
}

std::vector<double> to_array(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw InvalidArgument("config " + key + ": not an array: " + v);
  }
  std::vector<double> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.push_back(to_double(key, t));
  }
  return out;
}

std::string array_text(std::span<const double> values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_double(values[i]);
  }
  return out + "]";
}

struct Binding {
  std::string key;
  bool quoted = false;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Binding size_binding(std::string key, T& field) {
  return {key, false, [&field, key](const std::string& v) { field = static_cast<T>(to_size(key, v)); },
          [&field] { return std::to_string(field); }};
}

Binding int_binding(std::string key, int& field) {
  return {key, false, [&field, key](const std::string& v) { field = static_cast<int>(to_int(key, v)); },
          [&field] { return std::to_string(field); }};
}

Binding seed_binding(std::string key, std::uint64_t& field) {
  return {key, false, [&field, key](const std::string& v) { field = static_cast<std::uint64_t>(to_size(key, v)); },
          [&field] { return std::to_string(field); }};
}

Binding double_binding(std::string key, double& field) {
  return {key, false, [&field, key](const std::string& v) { field = to_double(key, v); },
          [&field] { return format_double(field); }};
}

Binding bool_binding(std::string key, bool& field) {
  return {key, false, [&field, key](const std::string& v) { field = to_bool(key, v); },
          [&field] { return std::string(field ? "true" : "false"); }};
}

Binding string_binding(std::string key, std::string& field) {
  return {key, true, [&field](const std::string& v) { field = v; }, [&field] { return field; }};
}

Binding path_binding(std::string key, std::filesystem::path& field) {
  return {key, true, [&field](const std::string& v) { field = v; }, [&field] { return field.string(); }};
}

Binding month_binding(std::string key, Month& field) {
  return {key, true, [&field](const std::string& v) { field = parse_month(v); },
          [&field] { return format_month(field); }};
}

template <std::size_t N>
Binding array_binding(std::string key, std::array<double, N>& field) {
  return {key, false,
          [&field, key](const std::string& v) {
            const auto a = to_array(key, v);
            if (a.size() != N) throw InvalidArgument("config " + key + ": expected " + std::to_string(N) + " values");
            std::copy(a.begin(), a.end(), field.begin());
          },
          [&field] { return array_text(field); }};
}

std::vector<Binding> bindings(Config& c) {
  return {
      size_binding("gen.n_instruments", c.gen.n_instruments),
      size_binding("gen.n_months", c.gen.n_months),
      array_binding("gen.error_rate", c.gen.error_rate),
      double_binding("gen.signal_strength", c.gen.signal_strength),
      seed_binding("gen.seed", c.gen.seed),
      month_binding("gen.start_month", c.gen.start_month),
      double_binding("gen.equity_share", c.gen.equity_share),
      double_binding("gen.short_term_share", c.gen.short_term_share),
      double_binding("gen.idqm_share", c.gen.idqm_share),
      double_binding("gen.confirm_rate", c.gen.confirm_rate),
      double_binding("gen.conditioning_weight", c.gen.conditioning_weight),
      double_binding("gen.planted_rate", c.gen.planted_rate),
      double_binding("features.smoothing", c.features.smoothing),
      int_binding("features.k_folds", c.features.k_folds),
      seed_binding("features.seed", c.features.seed),
      array_binding("features.split_ratios", c.features.split_ratios),
      int_binding("train.n_rounds", c.train.n_rounds),
      int_binding("train.max_depth", c.train.max_depth),
      double_binding("train.learning_rate", c.train.learning_rate),
      double_binding("train.min_child_cover", c.train.min_child_cover),
      double_binding("train.l2_leaf_reg", c.train.l2_leaf_reg),
      int_binding("train.early_stopping_patience", c.train.early_stopping_patience),
      seed_binding("train.seed", c.train.seed),
      bool_binding("train.use_confirms", c.assemble.use_confirms),
      double_binding("evaluate.threshold", c.threshold),
      size_binding("explain.counterfactuals", c.counterfactual.n),
      size_binding("explain.restarts", c.counterfactual.restarts),
      size_binding("explain.max_changes", c.counterfactual.max_changes),
      size_binding("explain.exhaustive_limit", c.counterfactual.exhaustive_limit),
      size_binding("explain.max_evaluations", c.counterfactual.max_evaluations),
      size_binding("explain.exemplars_k", c.exemplars_k),
      int_binding("copy.tree_max_depth", c.copy_tree.max_depth),
      double_binding("copy.tree_min_leaf", c.copy_tree.min_leaf),
      double_binding("copy.glm_l2", c.copy_glm.l2),
      int_binding("copy.glm_max_iter", c.copy_glm.max_iter),
      size_binding("monitor.bootstrap_b", c.bootstrap_b),
      size_binding("monitor.window", c.drift.window),
      double_binding("monitor.k", c.drift.k),
      double_binding("monitor.epsilon", c.drift.epsilon),
      double_binding("monitor.min_relative_change", c.drift.min_relative_change),
      size_binding("monitor.rows_per_month", c.drift_rows_per_month),
      string_binding("service.host", c.service.host),
      int_binding("service.port", c.service.port),
      path_binding("service.data_dir", c.service.data_dir),
      path_binding("service.model_dir", c.service.model_dir),
      size_binding("service.queue_limit", c.service.queue_limit),
      size_binding("service.monitoring_rows", c.service.monitoring_rows),
      bool_binding("service.monitoring", c.service.monitoring),
  };
}

std::string env_name(const std::string& key) {
  std::string out = "DQLOOP_";
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

void Config::apply(const ConfigValues& values) {
  auto b = bindings(*this);
  for (const auto& [key, value] : values) {
    auto it = std::find_if(b.begin(), b.end(), [&](const Binding& x) { return x.key == key; });
    if (it == b.end()) throw InvalidArgument("unknown config key " + key);
    it->set(value);
  }
}

void Config::validate() const {
  gen.validate();
  train.validate();
  if (!(threshold > 0 && threshold < 1)) throw InvalidArgument("threshold must lie in (0,1)");
  if (features.k_folds < 2) throw InvalidArgument("features.k_folds must be >= 2");
  if (!(features.smoothing > 0)) throw InvalidArgument("features.smoothing must be > 0");
  for (double r : features.split_ratios) {
    if (!(r > 0)) throw InvalidArgument("split ratios must be positive");
  }
  if (bootstrap_b < 2) throw InvalidArgument("monitor.bootstrap_b must be >= 2");
  if (drift.window < 2) throw InvalidArgument("monitor.window must be >= 2");
  if (!(drift.k > 0)) throw InvalidArgument("monitor.k must be > 0");
  if (counterfactual.n < 1) throw InvalidArgument("explain.counterfactuals must be >= 1");
  if (exemplars_k < 1) throw InvalidArgument("explain.exemplars_k must be >= 1");
  if (service.port < 0 || service.port > 65535) throw InvalidArgument("service.port out of range");
}

nlohmann::json Config::to_json() const {
  Config copy = *this;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& b : bindings(copy)) out[b.key] = b.get();
  return out;
}

std::string Config::hash() const { return sha256_hex(to_json().dump()); }

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

Config load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env) {
  Config c;
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read config " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    c.apply(parse_config_text(ss.str()));
  }
  ConfigValues overrides;
  for (const auto& b : bindings(c)) {
    if (auto v = env(env_name(b.key))) overrides[b.key] = *v;
  }
  c.apply(overrides);
  c.validate();
  return c;
}

std::string default_config_text() {
  Config c;
  std::string out, section;
  for (const auto& b : bindings(c)) {
    const auto dot = b.key.find('.');
    const std::string s = b.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += "[" + s + "]\n";
      section = s;
    }
    const std::string v = b.get();
    out += b.key.substr(dot + 1) + " = " + (b.quoted ? "\"" + v + "\"" : v) + '\n';
  }
  return out;
}

}  // namespace dqloop
