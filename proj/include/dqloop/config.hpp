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

// Run configuration. File format (a TOML subset):
//
//   # comment
//   [section]
//   key = 12            integers and floats
//   key = "text"        double-quoted strings
//   key = true          booleans
//   key = [0.6, 0.2]    flat arrays of numbers
//
// Keys are addressed as "section.key". Environment variables named
// DQLOOP_<SECTION>_<KEY> (upper case) override file values.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "dqloop/datagen.hpp"
#include "dqloop/explain.hpp"
#include "dqloop/features.hpp"
#include "dqloop/learners.hpp"
#include "dqloop/monitor.hpp"
#include "dqloop/store.hpp"
#include "json.hpp"

namespace dqloop {

// Flat "section.key" -> raw value text (strings unquoted).
using ConfigValues = std::map<std::string, std::string>;

// Throws InvalidArgument with the line number on malformed input.
ConfigValues parse_config_text(const std::string& text);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Empty: the CLI output directory and its models/ subdirectory.
  std::filesystem::path data_dir;
  std::filesystem::path model_dir;
  std::size_t queue_limit = 100;
  std::size_t monitoring_rows = 1000;
  // Compute the monitoring summary in the background after each deployment.
  bool monitoring = true;
};

struct Config {
  GenConfig gen;
  FeatureConfig features;
  TrainParams train;
  AssembleOptions assemble;
  double threshold = 0.5;
  // Explanations.
  CounterfactualOptions counterfactual;
  std::size_t exemplars_k = 5;
  SimpleParams copy_tree{6, 5.0, 0.0, 500, 1e-6};
  SimpleParams copy_glm{4, 5.0, 1.0, 500, 1e-6};
  // Monitoring.
  std::size_t bootstrap_b = 30;
  DriftOptions drift;
  std::size_t drift_rows_per_month = 1000;
  ServiceConfig service;

  // Throws InvalidArgument on out-of-range values.
  void validate() const;
  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON.
  std::string hash() const;
  // Sets every field present in `values`; unknown keys throw.
  void apply(const ConfigValues& values);
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

// Defaults, then the file (if given), then environment overrides.
Config load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env());

// Every known key with its default, in file format.
std::string default_config_text();

}  // namespace dqloop
