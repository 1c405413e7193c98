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

#include "dqloop/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace dqloop {

// ---------------------------------------------------------------------------
// Shapley values
// ---------------------------------------------------------------------------

double Attribution::additivity_error() const {
  double s = base;
  for (double c : contributions) s += c;
  return std::abs(s - margin);
}

nlohmann::json Attribution::to_json(const std::vector<std::string>& feature_names) const {
  nlohmann::json items = nlohmann::json::array();
  std::vector<std::size_t> order(contributions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(contributions[a]) > std::abs(contributions[b]);
  });
  for (auto j : order) {
    if (contributions[j] == 0.0) continue;
    items.push_back({{"feature", j < feature_names.size() ? feature_names[j] : std::to_string(j)},
                     {"contribution", contributions[j]}});
  }
  return {{"base", base},
          {"margin", margin},
          {"probability", logistic(margin)},
          {"additivity_error", additivity_error()},
          {"row_id", row_id},
          {"model_id", model_id},
          {"contributions", items}};
}

double tree_expected_value(const Tree& tree) {
  const double root = tree.nodes.at(0).cover;
  if (!(root > 0)) throw InvalidArgument("tree is missing cover counts");
  double total = 0;
  for (const auto& n : tree.nodes) {
    if (n.is_leaf()) total += n.value * n.cover;
  }
  return total / root;
}

double expected_value(const GbmModel& model) {
  double e = model.base_score;
  for (const auto& t : model.trees) e += tree_expected_value(t);
  return e;
}

namespace {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0;
  double one_fraction = 0;
  double weight = 0;
};

void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].weight += one_fraction * path[i].weight * (i + 1) / static_cast<double>(depth + 1);
    path[i].weight = zero_fraction * path[i].weight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = path[i].weight;
      path[i].weight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].weight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].weight = path[i].weight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

double unwound_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  double total = 0;
  if (one != 0) {
    for (int i = depth - 1; i >= 0; --i) {
      const double tmp = next / ((i + 1) * one);
      total += tmp;
      next = path[i].weight - tmp * zero * (depth - i);
    }
  } else {
    for (int i = depth - 1; i >= 0; --i) total += path[i].weight / (zero * (depth - i));
  }
  return total * (depth + 1);
}

void shap_recurse(const Tree& tree, std::span<const double> row, std::span<double> phi, int node,
                  int depth, PathElement* parent_path, double zero_fraction, double one_fraction,
                  int feature) {
  PathElement* path = parent_path + depth + 1;
  std::copy(parent_path, parent_path + depth + 1, path);
  extend_path(path, depth, zero_fraction, one_fraction, feature);
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const double w = unwound_sum(path, depth, i);
      phi[static_cast<std::size_t>(path[i].feature)] +=
          w * (path[i].one_fraction - path[i].zero_fraction) * n.value;
    }
    return;
  }
  const bool go_left = row[static_cast<std::size_t>(n.feature)] < n.threshold;
  const int hot = go_left ? n.left : n.right;
  const int cold = go_left ? n.right : n.left;
  const double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  const double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;
  double incoming_zero = 1, incoming_one = 1;
  int k = 0;
  for (; k <= depth; ++k) {
    if (path[k].feature == n.feature) break;
  }
  if (k != depth + 1) {
    incoming_zero = path[k].zero_fraction;
    incoming_one = path[k].one_fraction;
    unwind_path(path, depth, k);
    depth -= 1;
  }
  shap_recurse(tree, row, phi, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, n.feature);
  shap_recurse(tree, row, phi, cold, depth + 1, path, cold_zero * incoming_zero, 0, n.feature);
}

}  // namespace

void tree_shap(const Tree& tree, std::span<const double> row, std::span<double> phi) {
  if (tree.nodes.empty() || !(tree.nodes[0].cover > 0)) {
    throw InvalidArgument("tree is missing cover counts");
  }
  if (tree.nodes.size() == 1) return;
  for (const auto& n : tree.nodes) {
    if (!(n.cover > 0)) throw InvalidArgument("tree is missing cover counts");
  }
  const int d = tree.depth();
  std::vector<PathElement> buffer(static_cast<std::size_t>((d + 2) * (d + 3) / 2 + d + 3));
  shap_recurse(tree, row, phi, 0, 0, buffer.data(), 1, 1, -1);
}

Attribution shap_local(const GbmModel& model, std::span<const double> row) {
  Attribution a;
  a.contributions.assign(model.n_features, 0.0);
  for (const auto& t : model.trees) tree_shap(t, row, a.contributions);
  a.base = expected_value(model);
  a.margin = model.margin(row);
  return a;
}

std::vector<double> shap_global(const GbmModel& model, const DenseMatrix& rows) {
  if (rows.rows() == 0) throw InvalidArgument("shap_global needs at least one row");
  std::vector<double> total(model.n_features, 0.0), phi(model.n_features);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    std::fill(phi.begin(), phi.end(), 0.0);
    for (const auto& t : model.trees) tree_shap(t, rows.row(i), phi);
    for (std::size_t j = 0; j < phi.size(); ++j) total[j] += std::abs(phi[j]);
  }
  for (auto& v : total) v /= static_cast<double>(rows.rows());
  return total;
}

std::vector<std::size_t> importance_order(const std::vector<double>& global) {
  std::vector<std::size_t> order(global.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return global[a] > global[b]; });
  return order;
}

// ---------------------------------------------------------------------------
// Counterfactuals
// ---------------------------------------------------------------------------

void MutabilityPolicy::validate() const {
  if (std::none_of(variables.begin(), variables.end(), [](const auto& v) { return !v.immutable; })) {
    throw InvalidArgument("mutability policy has no mutable feature");
  }
  for (const auto& v : variables) {
    if (!(v.weight >= 0)) throw InvalidArgument("negative weight for " + v.name);
    for (const auto& c : v.candidates) {
      if (c.size() != v.features.size()) throw InvalidArgument("candidate width for " + v.name);
    }
    for (auto j : v.features) {
      if (j >= n_features) throw InvalidArgument("feature index out of range in " + v.name);
    }
  }
}

std::optional<std::size_t> MutabilityPolicy::variable_of(std::size_t feature) const {
  for (std::size_t v = 0; v < variables.size(); ++v) {
    const auto& f = variables[v].features;
    if (std::find(f.begin(), f.end(), feature) != f.end()) return v;
  }
  return std::nullopt;
}

CfVariable* MutabilityPolicy::find(std::string_view name) {
  for (auto& v : variables) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double robust_scale(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double med = quantile_sorted(values, 0.5);
  std::vector<double> dev;
  dev.reserve(values.size());
  for (double v : values) dev.push_back(std::abs(v - med));
  std::sort(dev.begin(), dev.end());
  const double mad = quantile_sorted(dev, 0.5);
  if (mad > 1e-12) return mad;
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(values.size()));
  return sd > 1e-12 ? sd : 1.0;
}

}  // namespace

MutabilityPolicy make_policy(const FeatureMatrix& fm, ExceptionType type, const PolicyOptions& options) {
  const FeatureSchema schema = fm.schema(type);
  const auto train = fm.rows_with(SplitTag::train);
  if (train.empty()) throw InvalidArgument("make_policy needs train rows");
  const DenseMatrix x = fm.view(type, train);
  MutabilityPolicy policy;
  policy.n_features = schema.size();
  auto weight_for = [&](const std::string& name, const std::string& source) {
    if (auto it = options.weights.find(name); it != options.weights.end()) return it->second;
    if (auto it = options.weights.find(source); it != options.weights.end()) return it->second;
    return 1.0;
  };

  std::map<std::string, std::size_t> group_of;  // source -> variable index
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& f = schema.features[j];
    if (f.transform == "onehot" || f.transform == "target") {
      auto [it, inserted] = group_of.try_emplace(f.source, policy.variables.size());
      if (inserted) {
        CfVariable v;
        v.name = f.source;
        v.source = f.source;
        v.numeric = false;
        policy.variables.push_back(v);
      }
      policy.variables[it->second].features.push_back(j);
      continue;
    }
    CfVariable v;
    v.name = f.name;
    v.source = f.source;
    if (f.kind == FeatureKind::boolean) {
      v.numeric = false;
      v.features = {j};
      v.candidates = {{0.0}, {1.0}};
      v.labels = {"false", "true"};
    } else {
      v.numeric = true;
      v.features = {j};
      std::vector<double> col(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i) col[i] = x(i, j);
      v.scale = robust_scale(col);
      std::sort(col.begin(), col.end());
      for (int d = 1; d <= 9; ++d) {
        const double q = quantile_sorted(col, d / 10.0);
        if (v.candidates.empty() || v.candidates.back()[0] != q) {
          v.candidates.push_back({q});
          v.labels.push_back(format_double(q));
        }
      }
    }
    policy.variables.push_back(std::move(v));
  }

  // Categorical groups: one candidate per observed category.
  const std::size_t t = index_of(type);
  for (auto& [source, vi] : group_of) {
    auto& v = policy.variables[vi];
    const auto col_it = std::find(encoded_columns().begin(), encoded_columns().end(), source);
    std::set<std::string> observed;
    if (col_it != encoded_columns().end()) {
      const auto c = static_cast<std::size_t>(col_it - encoded_columns().begin());
      for (auto i : train) observed.insert(fm.categories[c][i]);
      for (const auto& cat : observed) {
        std::vector<double> values;
        for (auto j : v.features) {
          const auto& f = schema.features[j];
          if (f.transform == "target") {
            values.push_back(fm.encoders[t][c].encode(cat));
          } else {
            const std::string suffix = f.name.substr(f.name.find('=') + 1);
            values.push_back(suffix == cat ? 1.0 : 0.0);
          }
        }
        // "other" one-hot fires when no listed value matched.
        bool any = false;
        std::size_t other = values.size();
        for (std::size_t k = 0; k < v.features.size(); ++k) {
          const auto& f = schema.features[v.features[k]];
          if (f.transform != "onehot") continue;
          if (f.name.ends_with("=other")) {
            other = k;
          } else {
            any = any || values[k] == 1.0;
          }
        }
        if (other < values.size() && !any) values[other] = 1.0;
        v.candidates.push_back(std::move(values));
        v.labels.push_back(cat);
      }
    }
  }

  for (auto& v : policy.variables) {
    v.immutable = options.immutable_sources.count(v.source) > 0;
    v.weight = weight_for(v.name, v.source);
  }
  policy.validate();
  return policy;
}

namespace {

struct Move {
  std::size_t var = 0;
  std::size_t cand = 0;
  double cost = 0;
};

class Searcher {
 public:
  Searcher(const ProbaFn& model, std::span<const double> row, const MutabilityPolicy& policy,
           const CounterfactualOptions& options)
      : model_(model), row_(row.begin(), row.end()), policy_(policy), opt_(options) {
    p0_ = model_(row_);
    orig_class_ = p0_ >= opt_.threshold ? 1 : 0;
    for (std::size_t v = 0; v < policy_.variables.size(); ++v) {
      const auto& var = policy_.variables[v];
      if (var.immutable) continue;
      for (std::size_t c = 0; c < var.candidates.size(); ++c) {
        if (is_current(var, c)) continue;
        moves_.push_back({v, c, move_cost(var, c)});
      }
    }
  }

  CounterfactualResult run() {
    CounterfactualResult result;
    std::map<std::size_t, std::vector<std::size_t>> by_var;
    for (std::size_t m = 0; m < moves_.size(); ++m) by_var[moves_[m].var].push_back(m);
    double grid = 1;
    for (const auto& [v, ms] : by_var) grid *= static_cast<double>(ms.size() + 1);
    if (grid <= static_cast<double>(opt_.exhaustive_limit)) {
      result.exhaustive = true;
      exhaustive(by_var);
    } else {
      heuristic();
    }
    result.evaluations = evaluations_;
    // Cheapest solution per changed-variable set, sorted by cost.
    std::map<std::vector<std::size_t>, std::vector<std::size_t>> best;
    for (const auto& s : solutions_) {
      std::vector<std::size_t> vars;
      for (auto m : s) vars.push_back(moves_[m].var);
      std::sort(vars.begin(), vars.end());
      auto it = best.find(vars);
      if (it == best.end() || cost_of(s) < cost_of(it->second)) best[vars] = s;
    }
    std::vector<std::vector<std::size_t>> ranked;
    for (auto& [vars, s] : best) ranked.push_back(s);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const auto& a, const auto& b) { return cost_of(a) < cost_of(b); });
    for (const auto& s : ranked) {
      if (result.items.size() >= opt_.n) break;
      auto cf = materialize(s);
      // Re-verify with a fresh evaluation before emitting.
      const double p = model_(cf.row);
      if ((p >= opt_.threshold ? 1 : 0) == orig_class_) continue;
      cf.probability = p;
      result.items.push_back(std::move(cf));
    }
    result.budget_exhausted = result.items.empty();
    return result;
  }

 private:
  bool is_current(const CfVariable& var, std::size_t c) const {
    for (std::size_t k = 0; k < var.features.size(); ++k) {
      if (row_[var.features[k]] != var.candidates[c][k]) return false;
    }
    return true;
  }

  double move_cost(const CfVariable& var, std::size_t c) const {
    if (var.numeric) {
      return var.weight * std::abs(var.candidates[c][0] - row_[var.features[0]]) / var.scale;
    }
    return var.weight;
  }

  double cost_of(const std::vector<std::size_t>& s) const {
    double c = 0;
    for (auto m : s) c += moves_[m].cost;
    return c;
  }

  void apply(std::vector<double>& x, std::size_t m) const {
    const auto& var = policy_.variables[moves_[m].var];
    for (std::size_t k = 0; k < var.features.size(); ++k) x[var.features[k]] = var.candidates[moves_[m].cand][k];
  }

  std::vector<double> build(const std::vector<std::size_t>& s) const {
    std::vector<double> x = row_;
    for (auto m : s) apply(x, m);
    return x;
  }

  double eval(const std::vector<double>& x) {
    ++evaluations_;
    return model_(x);
  }

  bool flips(double p) const { return (p >= opt_.threshold ? 1 : 0) != orig_class_; }

  // Progress toward the other side of the threshold, in log-odds.
  double progress(double p) const {
    const double z = std::log(std::clamp(p, 1e-12, 1 - 1e-12) / (1 - std::clamp(p, 1e-12, 1 - 1e-12)));
    return orig_class_ == 1 ? -z : z;
  }

  bool budget_left() const { return evaluations_ < opt_.max_evaluations; }

  void exhaustive(const std::map<std::size_t, std::vector<std::size_t>>& by_var) {
    std::vector<const std::vector<std::size_t>*> groups;
    for (const auto& [v, ms] : by_var) groups.push_back(&ms);
    std::vector<std::size_t> digit(groups.size(), 0);  // 0 = unchanged
    for (;;) {
      std::size_t g = 0;
      while (g < groups.size() && ++digit[g] > groups[g]->size()) digit[g++] = 0;
      if (g == groups.size()) break;
      std::vector<std::size_t> s;
      for (std::size_t k = 0; k < groups.size(); ++k) {
        if (digit[k] > 0) s.push_back((*groups[k])[digit[k] - 1]);
      }
      if (flips(eval(build(s)))) solutions_.push_back(s);
    }
  }

  // Drops changes that are not needed to keep the flip.
  std::vector<std::size_t> prune(std::vector<std::size_t> s) {
    std::sort(s.begin(), s.end(), [&](auto a, auto b) { return moves_[a].cost > moves_[b].cost; });
    for (std::size_t k = 0; k < s.size() && s.size() > 1 && budget_left();) {
      auto trial = s;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k));
      if (flips(eval(build(trial)))) {
        s = std::move(trial);
      } else {
        ++k;
      }
    }
    return s;
  }

  void heuristic() {
    // Single moves.
    std::vector<double> gain(moves_.size());
    const double base = progress(p0_);
    for (std::size_t m = 0; m < moves_.size() && budget_left(); ++m) {
      const double p = eval(build({m}));
      gain[m] = progress(p) - base;
      if (flips(p)) solutions_.push_back({m});
    }
    // Pairs among the most promising moves.
    std::vector<std::size_t> order(moves_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return gain[a] / (moves_[a].cost + 1e-9) > gain[b] / (moves_[b].cost + 1e-9);
    });
    const std::size_t top = std::min<std::size_t>(order.size(), 24);
    for (std::size_t a = 0; a < top; ++a) {
      for (std::size_t b = a + 1; b < top && budget_left(); ++b) {
        if (moves_[order[a]].var == moves_[order[b]].var) continue;
        const std::vector<std::size_t> s{order[a], order[b]};
        if (flips(eval(build(s)))) solutions_.push_back(s);
      }
    }
    // Greedy best-first, then seeded randomized restarts.
    std::mt19937_64 rng(mix_seed(opt_.seed, 0xCF));
    for (std::size_t restart = 0; restart <= opt_.restarts && budget_left(); ++restart) {
      std::vector<std::size_t> s;
      std::vector<double> x = row_;
      double current = base;
      for (std::size_t step = 0; step < opt_.max_changes && budget_left(); ++step) {
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t m = 0; m < moves_.size() && budget_left(); ++m) {
          const bool used = std::any_of(s.begin(), s.end(), [&](auto u) { return moves_[u].var == moves_[m].var; });
          if (used) continue;
          auto trial = x;
          apply(trial, m);
          const double g = progress(eval(trial)) - current;
          if (g > 0) scored.push_back({g / (moves_[m].cost + 1e-9), m});
        }
        if (scored.empty()) break;
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        std::size_t pick = 0;
        if (restart > 0) {
          pick = std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(scored.size(), 3) - 1)(rng);
        }
        const std::size_t m = scored[pick].second;
        s.push_back(m);
        apply(x, m);
        const double p = eval(x);
        current = progress(p);
        if (flips(p)) {
          solutions_.push_back(prune(s));
          break;
        }
      }
    }
    for (auto& sol : solutions_) {
      if (sol.size() > 1 && budget_left()) sol = prune(sol);
    }
  }

  Counterfactual materialize(const std::vector<std::size_t>& s) const {
    Counterfactual cf;
    cf.row = build(s);
    cf.original_class = orig_class_;
    cf.flipped_class = 1 - orig_class_;
    cf.original_probability = p0_;
    cf.cost = cost_of(s);
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end(), [&](auto a, auto b) { return moves_[a].var < moves_[b].var; });
    for (auto m : sorted) {
      const auto& var = policy_.variables[moves_[m].var];
      std::string original;
      if (var.numeric) {
        original = format_double(row_[var.features[0]]);
      } else {
        // Closest candidate to the current encoding.
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < var.candidates.size(); ++c) {
          double d = 0;
          for (std::size_t k = 0; k < var.features.size(); ++k) {
            d += std::abs(row_[var.features[k]] - var.candidates[c][k]);
          }
          if (d < best) {
            best = d;
            original = var.labels[c];
          }
        }
      }
      cf.changes.push_back({var.name, original, var.labels[moves_[m].cand]});
    }
    return cf;
  }

  const ProbaFn& model_;
  std::vector<double> row_;
  const MutabilityPolicy& policy_;
  CounterfactualOptions opt_;
  double p0_ = 0;
  int orig_class_ = 0;
  std::vector<Move> moves_;
  std::vector<std::vector<std::size_t>> solutions_;
  std::size_t evaluations_ = 0;
};

}  // namespace

CounterfactualResult find_counterfactuals(const ProbaFn& model, std::span<const double> row,
                                          const MutabilityPolicy& policy,
                                          const CounterfactualOptions& options) {
  policy.validate();
  if (row.size() != policy.n_features) throw SchemaMismatch("row width differs from policy");
  return Searcher(model, row, policy, options).run();
}

CounterfactualResult find_counterfactuals(const GbmModel& model, std::span<const double> row,
                                          const MutabilityPolicy& policy,
                                          const CounterfactualOptions& options) {
  const ProbaFn fn = [&](std::span<const double> x) { return model.predict_proba(x); };
  return find_counterfactuals(fn, row, policy, options);
}

double counterfactual_cost(const MutabilityPolicy& policy, std::span<const double> row,
                           std::span<const double> changed) {
  double cost = 0;
  for (const auto& v : policy.variables) {
    bool differs = false;
    for (auto j : v.features) differs = differs || row[j] != changed[j];
    if (!differs) continue;
    cost += v.numeric ? v.weight * std::abs(changed[v.features[0]] - row[v.features[0]]) / v.scale : v.weight;
  }
  return cost;
}

nlohmann::json Counterfactual::to_json() const {
  nlohmann::json changes_json = nlohmann::json::array();
  for (const auto& c : changes) {
    changes_json.push_back({{"feature", c.variable}, {"from", c.original}, {"to", c.proposed}});
  }
  return {{"changes", changes_json},
          {"original_class", original_class},
          {"flipped_class", flipped_class},
          {"original_probability", original_probability},
          {"probability", probability},
          {"cost", cost}};
}

nlohmann::json CounterfactualResult::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : items) list.push_back(c.to_json());
  return {{"counterfactuals", list},
          {"budget_exhausted", budget_exhausted},
          {"exhaustive", exhaustive},
          {"evaluations", evaluations}};
}

// ---------------------------------------------------------------------------
// Exemplars
// ---------------------------------------------------------------------------

GowerMetric::GowerMetric(const DenseMatrix& reference, std::vector<bool> categorical)
    : range_(reference.cols(), 0.0), categorical_(std::move(categorical)) {
  if (categorical_.size() != reference.cols()) throw InvalidArgument("Gower mask width");
  for (std::size_t j = 0; j < reference.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < reference.rows(); ++i) {
      lo = std::min(lo, reference(i, j));
      hi = std::max(hi, reference(i, j));
    }
    range_[j] = reference.rows() ? hi - lo : 0.0;
  }
}

double GowerMetric::distance(std::span<const double> a, std::span<const double> b) const {
  double d = 0;
  for (std::size_t j = 0; j < range_.size(); ++j) {
    if (categorical_[j] || range_[j] <= 0) {
      d += a[j] != b[j] ? 1.0 : 0.0;
    } else {
      d += std::min(1.0, std::abs(a[j] - b[j]) / range_[j]);
    }
  }
  return range_.empty() ? 0.0 : d / static_cast<double>(range_.size());
}

std::vector<Exemplar> nearest_exemplars(std::span<const double> query, const DenseMatrix& rows,
                                        const std::vector<std::uint8_t>& labels,
                                        const GowerMetric& metric, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (labels.size() != rows.rows()) throw InvalidArgument("exemplar label count");
  std::vector<Exemplar> all(rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) all[i] = {i, metric.distance(query, rows.row(i)), labels[i]};
  const std::size_t take = std::min(k, all.size());
  auto less = [](const Exemplar& a, const Exemplar& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.row < b.row;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), less);
  all.resize(take);
  return all;
}

std::vector<bool> categorical_mask(const FeatureSchema& schema) {
  std::vector<bool> out;
  for (const auto& f : schema.features) out.push_back(f.kind != FeatureKind::numeric);
  return out;
}

// ---------------------------------------------------------------------------
// Copies
// ---------------------------------------------------------------------------

CopyReport copy_model(const GbmModel& original, const DenseMatrix& pool, SimpleKind kind,
                      const DenseMatrix& holdout, const DenseMatrix& test,
                      const std::vector<std::uint8_t>& test_labels, const SimpleParams& params,
                      double threshold) {
  if (pool.rows() < 100) throw InvalidArgument("copy pool too small (< 100 rows)");
  std::vector<double> hard(pool.rows());
  for (std::size_t i = 0; i < pool.rows(); ++i) hard[i] = original.predict_proba(pool.row(i)) >= 0.5 ? 1.0 : 0.0;
  CopyReport r;
  r.copy = train_simple(kind, pool, hard, params, original.schema_hash);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < holdout.rows(); ++i) {
    agree += (original.predict_proba(holdout.row(i)) >= 0.5) == (r.copy.predict_proba(holdout.row(i)) >= 0.5);
  }
  r.fidelity = holdout.rows() ? static_cast<double>(agree) / static_cast<double>(holdout.rows()) : 0.0;
  const auto po = original.predict_proba(test);
  const auto pc = r.copy.predict_proba(test);
  const auto cmo = confusion(po, test_labels, threshold);
  const auto cmc = confusion(pc, test_labels, threshold);
  r.original_auc = auc_metric(po, test_labels);
  r.original_precision = precision(cmo);
  r.original_recall = recall(cmo);
  r.copy_auc = auc_metric(pc, test_labels);
  r.copy_precision = precision(cmc);
  r.copy_recall = recall(cmc);
  return r;
}

std::string copy_csv(const std::vector<CopyComparison>& rows) {
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return to_string(a.type) < to_string(b.type); });
  std::string out = "exception_type,metric,original,tree,glm\n";
  for (const auto& r : sorted) {
    const std::string t(to_string(r.type));
    out += t + ",AUC," + r.tree.original_auc.render() + ',' + r.tree.copy_auc.render() + ',' +
           r.glm.copy_auc.render() + '\n';
    out += t + ",Precision," + r.tree.original_precision.render() + ',' + r.tree.copy_precision.render() +
           ',' + r.glm.copy_precision.render() + '\n';
    out += t + ",Recall," + r.tree.original_recall.render() + ',' + r.tree.copy_recall.render() + ',' +
           r.glm.copy_recall.render() + '\n';
    out += t + ",Fidelity,1.000," + format_fixed(r.tree.fidelity, 3) + ',' + format_fixed(r.glm.fidelity, 3) + '\n';
  }
  return out;
}

nlohmann::json copy_json(const std::vector<CopyComparison>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    auto one = [](const CopyReport& c) {
      return nlohmann::json{{"auc", c.copy_auc.to_json()},
                            {"precision", c.copy_precision.to_json()},
                            {"recall", c.copy_recall.to_json()},
                            {"fidelity", c.fidelity},
                            {"converged", c.copy.converged}};
    };
    out.push_back({{"exception_type", std::string(to_string(r.type))},
                   {"original",
                    {{"auc", r.tree.original_auc.to_json()},
                     {"precision", r.tree.original_precision.to_json()},
                     {"recall", r.tree.original_recall.to_json()}}},
                   {"tree", one(r.tree)},
                   {"glm", one(r.glm)}});
  }
  return out;
}

}  // namespace dqloop
