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

#include "dqloop/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dqloop {

void TrainParams::validate() const {
  if (n_rounds < 1) throw InvalidArgument("n_rounds must be positive");
  if (max_depth < 1) throw InvalidArgument("max_depth must be positive");
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (!(min_child_cover > 0)) throw InvalidArgument("min_child_cover must be positive");
  if (!(l2_leaf_reg > 0)) throw InvalidArgument("l2_leaf_reg must be positive");
  if (early_stopping_patience < 1) throw InvalidArgument("early_stopping_patience must be positive");
}

nlohmann::json TrainParams::to_json() const {
  return {{"n_rounds", n_rounds},
          {"max_depth", max_depth},
          {"learning_rate", learning_rate},
          {"min_child_cover", min_child_cover},
          {"l2_leaf_reg", l2_leaf_reg},
          {"early_stopping_patience", early_stopping_patience},
          {"seed", seed}};
}

double Tree::predict(std::span<const double> row) const {
  std::size_t k = 0;
  while (!nodes[k].is_leaf()) {
    const auto& n = nodes[k];
    k = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left
                                                                                       : n.right);
  }
  return nodes[k].value;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].is_leaf()) continue;
    d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
    d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
    best = std::max(best, d[k] + 1);
  }
  return best;
}

double GbmModel::margin(std::span<const double> row) const {
  if (row.size() != n_features) {
    throw SchemaMismatch("row width " + std::to_string(row.size()) + " != model width " +
                         std::to_string(n_features));
  }
  double m = base_score;
  for (const auto& t : trees) m += t.predict(row);
  return m;
}

double GbmModel::predict_proba(std::span<const double> row) const { return logistic(margin(row)); }

std::vector<double> GbmModel::predict_proba(const DenseMatrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_proba(x.row(i));
  return out;
}

void GbmModel::check_schema(const std::string& hash, std::size_t width) const {
  if (hash != schema_hash || width != n_features) {
    throw SchemaMismatch("feature schema does not match the model (expected " + schema_hash + ")");
  }
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Row order and the matching values per feature, so the split scan reads
// contiguous memory.
struct Presorted {
  std::vector<std::vector<std::uint32_t>> order;
  std::vector<std::vector<double>> value;
};

Presorted presort(const DenseMatrix& x) {
  Presorted p;
  p.order.resize(x.cols());
  p.value.resize(x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    auto& o = p.order[j];
    o.resize(x.rows());
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return x(a, j) < x(b, j); });
    p.value[j].resize(x.rows());
    for (std::size_t k = 0; k < o.size(); ++k) p.value[j][k] = x(o[k], j);
  }
  return p;
}

struct GrowParams {
  int max_depth = 4;
  double lambda = 1.0;
  double min_cover = 1.0;
  double leaf_scale = 1.0;
};

// Level-wise exact greedy growth on per-row (gradient, hessian, cover).
// Split gain G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l); leaf -G/(H+l).
Tree grow_tree(const DenseMatrix& x, const Presorted& sorted, const std::vector<double>& g,
               const std::vector<double>& h, const std::vector<double>& c, const GrowParams& p) {
  const std::size_t n = x.rows();
  struct Sums {
    double g = 0, h = 0, c = 0;
  };
  Tree tree;
  std::vector<Sums> sums;
  std::vector<int> node_of(n, -1);
  Sums root;
  for (std::size_t i = 0; i < n; ++i) {
    if (c[i] <= 0) continue;
    node_of[i] = 0;
    root.g += g[i];
    root.h += h[i];
    root.c += c[i];
  }
  tree.nodes.push_back({});
  tree.nodes[0].cover = root.c;
  sums.push_back(root);
  auto score = [&](double gs, double hs) { return gs * gs / (hs + p.lambda); };

  std::vector<int> frontier{0};
  for (int depth = 0; depth < p.max_depth && !frontier.empty(); ++depth) {
    const std::size_t k = frontier.size();
    std::vector<int> slot_of(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < k; ++s) slot_of[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);

    std::vector<double> best_gain(k, 1e-12), best_thr(k, 0.0);
    std::vector<int> best_feat(k, -1);
    std::vector<Sums> left(k);
    std::vector<double> last(k);
    // Frontier slot per row, with its (g, h, c) alongside.
    std::vector<int> slot(n, -1);
    std::vector<Sums> stats(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (node_of[i] < 0) continue;
      slot[i] = slot_of[static_cast<std::size_t>(node_of[i])];
      stats[i] = {g[i], h[i], c[i]};
    }
    for (std::size_t j = 0; j < x.cols(); ++j) {
      std::fill(left.begin(), left.end(), Sums{});
      const auto& order = sorted.order[j];
      const auto& values = sorted.value[j];
      for (std::size_t q = 0; q < n; ++q) {
        const std::uint32_t r = order[q];
        const int s = slot[r];
        if (s < 0) continue;
        const auto su = static_cast<std::size_t>(s);
        const double v = values[q];
        Sums& l = left[su];
        if (l.c > 0 && v > last[su]) {
          const Sums& t = sums[static_cast<std::size_t>(frontier[su])];
          const double rc = t.c - l.c;
          if (l.c >= p.min_cover && rc >= p.min_cover) {
            const double gain = score(l.g, l.h) + score(t.g - l.g, t.h - l.h) - score(t.g, t.h);
            if (gain > best_gain[su]) {
              best_gain[su] = gain;
              best_feat[su] = static_cast<int>(j);
              double thr = last[su] + 0.5 * (v - last[su]);
              if (!(thr > last[su])) thr = v;
              best_thr[su] = thr;
            }
          }
        }
        const Sums& st = stats[r];
        l.g += st.g;
        l.h += st.h;
        l.c += st.c;
        last[su] = v;
      }
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < k; ++s) {
      if (best_feat[s] < 0) continue;
      const auto id = static_cast<std::size_t>(frontier[s]);
      const int li = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      sums.push_back({});
      sums.push_back({});
      tree.nodes[id].feature = best_feat[s];
      tree.nodes[id].threshold = best_thr[s];
      tree.nodes[id].left = li;
      tree.nodes[id].right = li + 1;
      next.push_back(li);
      next.push_back(li + 1);
    }
    if (next.empty()) break;
    for (std::size_t i = 0; i < n; ++i) {
      const int node = node_of[i];
      if (node < 0) continue;
      const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
      if (nd.is_leaf()) continue;
      const int child = x(i, static_cast<std::size_t>(nd.feature)) < nd.threshold ? nd.left : nd.right;
      node_of[i] = child;
      auto& su = sums[static_cast<std::size_t>(child)];
      su.g += g[i];
      su.h += h[i];
      su.c += c[i];
    }
    for (int child : next) {
      tree.nodes[static_cast<std::size_t>(child)].cover = sums[static_cast<std::size_t>(child)].c;
    }
    frontier = std::move(next);
  }
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    if (tree.nodes[id].is_leaf()) {
      tree.nodes[id].value = -sums[id].g / (sums[id].h + p.lambda) * p.leaf_scale;
    }
  }
  return tree;
}

double weighted_loss(const std::vector<double>& margin, const std::vector<std::uint8_t>& y,
                     const std::vector<double>& w) {
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < margin.size(); ++i) {
    if (w[i] <= 0) continue;
    total += w[i] * (softplus(margin[i]) - (y[i] ? margin[i] : 0.0));
    wsum += w[i];
  }
  return total / wsum;
}

double mean_loss(const std::vector<double>& margin, const std::vector<std::uint8_t>& y) {
  double total = 0;
  for (std::size_t i = 0; i < margin.size(); ++i) total += softplus(margin[i]) - (y[i] ? margin[i] : 0.0);
  return margin.empty() ? 0.0 : total / static_cast<double>(margin.size());
}

}  // namespace

double log_loss(const std::vector<double>& p, const std::vector<std::uint8_t>& y) {
  if (p.size() != y.size()) throw InvalidArgument("log_loss: size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-15, 1 - 1e-15);
    total -= y[i] ? std::log(q) : std::log(1 - q);
  }
  return p.empty() ? 0.0 : total / static_cast<double>(p.size());
}

GbmModel train_gbm(const DenseMatrix& x, const std::vector<std::uint8_t>& y,
                   const TrainParams& params, const std::string& schema_hash,
                   const DenseMatrix* x_valid, const std::vector<std::uint8_t>* y_valid,
                   const std::vector<double>* weights) {
  params.validate();
  const std::size_t n = x.rows();
  if (y.size() != n) throw InvalidArgument("train_gbm: label count != row count");
  std::vector<double> w = weights ? *weights : std::vector<double>(n, 1.0);
  if (w.size() != n) throw InvalidArgument("train_gbm: weight count != row count");
  double wsum = 0, wpos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] > 1) throw InvalidArgument("train_gbm: labels must be 0/1");
    wsum += w[i];
    wpos += w[i] * y[i];
  }
  if (wpos <= 0 || wpos >= wsum) {
    throw InvalidArgument("train_gbm: degenerate single-class training set");
  }
  const bool validate = x_valid != nullptr && y_valid != nullptr && x_valid->rows() > 0;
  if (validate && x_valid->cols() != x.cols()) throw SchemaMismatch("validation width differs");

  GbmModel model;
  model.schema_hash = schema_hash;
  model.n_features = x.cols();
  model.learning_rate = params.learning_rate;
  const double p0 = wpos / wsum;
  model.base_score = std::log(p0 / (1 - p0));

  const Presorted order = presort(x);
  std::vector<double> margin(n, model.base_score), g(n), h(n), trial(n);
  std::vector<double> vmargin;
  if (validate) vmargin.assign(x_valid->rows(), model.base_score);
  double loss = weighted_loss(margin, y, w);
  model.train_loss.push_back(loss);
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t best_trees = 0;
  if (validate) {
    best_valid = mean_loss(vmargin, *y_valid);
    model.validation_loss.push_back(best_valid);
  }

  const GrowParams grow{params.max_depth, params.l2_leaf_reg, params.min_child_cover,
                        params.learning_rate};
  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = logistic(margin[i]);
      g[i] = w[i] * (p - y[i]);
      h[i] = w[i] * std::max(p * (1 - p), 1e-16);
    }
    Tree tree = grow_tree(x, order, g, h, w, grow);
    if (tree.nodes.size() == 1 && std::abs(tree.nodes[0].value) < 1e-15) break;

    // Guard the monotone-loss contract: shrink a step that overshoots.
    double new_loss = 0;
    bool accepted = false;
    for (int attempt = 0; attempt <= 20; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = margin[i] + tree.predict(x.row(i));
      new_loss = weighted_loss(trial, y, w);
      if (new_loss <= loss) {
        accepted = true;
        break;
      }
      for (auto& node : tree.nodes) {
        if (node.is_leaf()) node.value *= 0.5;
      }
    }
    if (!accepted) break;
    margin.swap(trial);
    loss = new_loss;
    model.train_loss.push_back(loss);
    model.trees.push_back(std::move(tree));

    if (validate) {
      for (std::size_t i = 0; i < vmargin.size(); ++i) {
        vmargin[i] += model.trees.back().predict(x_valid->row(i));
      }
      const double vl = mean_loss(vmargin, *y_valid);
      model.validation_loss.push_back(vl);
      if (vl < best_valid - 1e-12) {
        best_valid = vl;
        best_trees = model.trees.size();
      } else if (model.trees.size() - best_trees >= static_cast<std::size_t>(params.early_stopping_patience)) {
        break;
      }
    }
  }
  if (validate) {
    model.trees.resize(best_trees);
    model.train_loss.resize(best_trees + 1);
    model.validation_loss.resize(best_trees + 1);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Simple models
// ---------------------------------------------------------------------------

std::string_view to_string(SimpleKind k) { return k == SimpleKind::tree ? "tree" : "glm"; }

double SimpleModel::predict_proba(std::span<const double> row) const {
  if (row.size() != n_features) {
    throw SchemaMismatch("row width " + std::to_string(row.size()) + " != model width " +
                         std::to_string(n_features));
  }
  if (kind == SimpleKind::tree) return std::clamp(tree.predict(row), 0.0, 1.0);
  double z = intercept;
  for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * row[j];
  return logistic(z);
}

std::vector<double> SimpleModel::predict_proba(const DenseMatrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_proba(x.row(i));
  return out;
}

namespace {

// Objective and gradient in one pass; theta = (w, b).
double glm_eval(const DenseMatrix& x, const std::vector<double>& y, std::span<const double> theta,
                double l2, std::vector<double>* grad) {
  const std::size_t n = x.rows(), p = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  double f = 0;
  if (grad) grad->assign(p + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    double z = theta[p];
    for (std::size_t j = 0; j < p; ++j) z += theta[j] * row[j];
    f += softplus(z) - y[i] * z;
    if (grad) {
      const double r = logistic(z) - y[i];
      for (std::size_t j = 0; j < p; ++j) (*grad)[j] += r * row[j];
      (*grad)[p] += r;
    }
  }
  f *= inv_n;
  double pen = 0;
  for (std::size_t j = 0; j < p; ++j) pen += theta[j] * theta[j];
  f += 0.5 * l2 * inv_n * pen;
  if (grad) {
    for (std::size_t j = 0; j < p; ++j) (*grad)[j] = (*grad)[j] * inv_n + l2 * inv_n * theta[j];
    (*grad)[p] *= inv_n;
  }
  return f;
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double a : v) m = std::max(m, std::abs(a));
  return m;
}

struct DescentResult {
  std::vector<double> theta;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
};

// Full-batch gradient descent with Armijo backtracking.
template <class Eval>
DescentResult gradient_descent(std::vector<double> theta, Eval&& eval, int max_iter, double tol) {
  DescentResult out;
  std::vector<double> grad, trial(theta.size());
  double f = eval(theta, &grad);
  out.trace.push_back(f);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    if (max_abs(grad) < tol) {
      out.converged = true;
      break;
    }
    double gg = 0;
    for (double v : grad) gg += v * v;
    double f_new = f;
    bool moved = false;
    for (int halving = 0; halving < 60; ++halving) {
      for (std::size_t k = 0; k < theta.size(); ++k) trial[k] = theta[k] - step * grad[k];
      f_new = eval(trial, nullptr);
      if (f_new <= f - 1e-4 * step * gg) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    theta.swap(trial);
    f = eval(theta, &grad);
    out.trace.push_back(f);
    out.iterations = it + 1;
    step = std::min(step * 2.0, 1e4);
  }
  if (!out.converged && max_abs(grad) < tol) out.converged = true;
  out.theta = std::move(theta);
  return out;
}

}  // namespace

double glm_objective(const DenseMatrix& x, const std::vector<double>& y,
                     std::span<const double> theta, double l2) {
  if (theta.size() != x.cols() + 1) throw InvalidArgument("glm_objective: theta length");
  return glm_eval(x, y, theta, l2, nullptr);
}

std::vector<double> glm_gradient(const DenseMatrix& x, const std::vector<double>& y,
                                 std::span<const double> theta, double l2) {
  if (theta.size() != x.cols() + 1) throw InvalidArgument("glm_gradient: theta length");
  std::vector<double> grad;
  glm_eval(x, y, theta, l2, &grad);
  return grad;
}

SimpleModel train_simple(SimpleKind kind, const DenseMatrix& x, const std::vector<double>& targets,
                         const SimpleParams& params, const std::string& schema_hash) {
  const std::size_t n = x.rows(), p = x.cols();
  if (targets.size() != n) throw InvalidArgument("train_simple: target count != row count");
  if (n == 0) throw InvalidArgument("train_simple: empty training set");
  double lo = 1, hi = 0;
  for (double t : targets) {
    if (!(t >= 0 && t <= 1)) throw InvalidArgument("train_simple: targets must lie in [0,1]");
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  if (lo == hi) throw InvalidArgument("train_simple: degenerate single-class training set");

  SimpleModel m;
  m.kind = kind;
  m.schema_hash = schema_hash;
  m.n_features = p;
  if (kind == SimpleKind::tree) {
    std::vector<double> g(n), h(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) g[i] = -targets[i];
    m.tree = grow_tree(x, presort(x), g, h, h, {params.max_depth, 0.0, params.min_leaf, 1.0});
    return m;
  }

  // Fit on standardized columns, report weights on the raw scale.
  std::vector<double> mu(p, 0.0), sd(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) mu[j] += x(i, j);
  }
  for (auto& v : mu) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) sd[j] += (x(i, j) - mu[j]) * (x(i, j) - mu[j]);
  }
  for (auto& v : sd) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;
  }
  DenseMatrix z(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) z(i, j) = (x(i, j) - mu[j]) / sd[j];
  }
  std::vector<double> theta(p + 1, 0.0);
  const double ybar = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(n);
  theta[p] = std::log(std::clamp(ybar, 1e-6, 1 - 1e-6) / (1 - std::clamp(ybar, 1e-6, 1 - 1e-6)));
  auto res = gradient_descent(
      theta,
      [&](const std::vector<double>& t, std::vector<double>* grad) {
        return glm_eval(z, targets, t, params.l2, grad);
      },
      params.max_iter, params.tolerance);
  m.converged = res.converged;
  m.iterations = res.iterations;
  m.objective_trace = std::move(res.trace);
  m.weights.resize(p);
  m.intercept = res.theta[p];
  for (std::size_t j = 0; j < p; ++j) {
    m.weights[j] = res.theta[j] / sd[j];
    m.intercept -= res.theta[j] * mu[j] / sd[j];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Meta-classifier
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kMetaInputs = kNumExceptionTypes;

void softmax_logits(std::span<const double> theta, std::span<const double> x,
                    std::array<double, kMetaClasses>& out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < kMetaClasses; ++c) {
    double z = theta[kMetaClasses * kMetaInputs + c];
    for (std::size_t j = 0; j < kMetaInputs; ++j) z += theta[c * kMetaInputs + j] * x[j];
    out[c] = z;
    mx = std::max(mx, z);
  }
  double s = 0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    s += v;
  }
  for (auto& v : out) v /= s;
}

}  // namespace

std::array<double, kMetaClasses> MetaModel::predict(std::span<const double> probs) const {
  if (probs.size() != kMetaInputs) throw SchemaMismatch("meta model expects 7 probabilities");
  std::vector<double> theta(weights);
  theta.insert(theta.end(), bias.begin(), bias.end());
  std::array<double, kMetaClasses> out{};
  softmax_logits(theta, probs, out);
  return out;
}

std::size_t MetaModel::predict_class(std::span<const double> probs) const {
  const auto p = predict(probs);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::string meta_class_name(std::size_t cls) {
  if (cls == kNominalClass) return "Nominal";
  if (cls > kNominalClass) throw InvalidArgument("meta class out of range");
  return std::string(to_string(kAllExceptionTypes[cls]));
}

MetaModel train_meta(const DenseMatrix& probs, const std::vector<std::size_t>& classes, double l2,
                     int max_iter, double tolerance) {
  const std::size_t n = probs.rows();
  if (probs.cols() != kMetaInputs) throw InvalidArgument("train_meta: expected 7 probability columns");
  if (classes.size() != n) throw InvalidArgument("train_meta: class count != row count");
  std::array<std::size_t, kMetaClasses> seen{};
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] >= kMetaClasses) throw InvalidArgument("train_meta: class out of range");
    ++seen[classes[i]];
    for (double v : probs.row(i)) {
      if (!(v >= 0 && v <= 1)) throw InvalidArgument("train_meta: probabilities must lie in [0,1]");
    }
  }
  if (std::count_if(seen.begin(), seen.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw InvalidArgument("train_meta: at least two classes required");
  }
  const std::size_t nw = kMetaClasses * kMetaInputs;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto eval = [&](const std::vector<double>& theta, std::vector<double>* grad) {
    double f = 0;
    if (grad) grad->assign(theta.size(), 0.0);
    std::array<double, kMetaClasses> p{};
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = probs.row(i);
      softmax_logits(theta, x, p);
      f -= std::log(std::max(p[classes[i]], 1e-300));
      if (grad) {
        for (std::size_t c = 0; c < kMetaClasses; ++c) {
          const double r = p[c] - (c == classes[i] ? 1.0 : 0.0);
          for (std::size_t j = 0; j < kMetaInputs; ++j) (*grad)[c * kMetaInputs + j] += r * x[j];
          (*grad)[nw + c] += r;
        }
      }
    }
    f *= inv_n;
    double pen = 0;
    for (std::size_t k = 0; k < nw; ++k) pen += theta[k] * theta[k];
    f += 0.5 * l2 * inv_n * pen;
    if (grad) {
      for (std::size_t k = 0; k < theta.size(); ++k) {
        (*grad)[k] *= inv_n;
        if (k < nw) (*grad)[k] += l2 * inv_n * theta[k];
      }
    }
    return f;
  };
  auto res = gradient_descent(std::vector<double>(nw + kMetaClasses, 0.0), eval, max_iter, tolerance);
  MetaModel m;
  m.weights.assign(res.theta.begin(), res.theta.begin() + static_cast<std::ptrdiff_t>(nw));
  std::copy(res.theta.begin() + static_cast<std::ptrdiff_t>(nw), res.theta.end(), m.bias.begin());
  m.converged = res.converged;
  m.iterations = res.iterations;
  return m;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const Tree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.cover});
  }
  return nodes;
}

Tree tree_from_json(const nlohmann::json& j) {
  Tree t;
  for (const auto& a : j) {
    if (!a.is_array() || a.size() != 6) throw CorruptPayload("tree node must have 6 fields");
    t.nodes.push_back({a[0].get<int>(), a[1].get<double>(), a[2].get<int>(), a[3].get<int>(),
                       a[4].get<double>(), a[5].get<double>()});
  }
  if (t.nodes.empty()) throw CorruptPayload("tree without nodes");
  const int n = static_cast<int>(t.nodes.size());
  for (const auto& node : t.nodes) {
    if (node.is_leaf()) continue;
    if (node.left <= 0 || node.left >= n || node.right <= 0 || node.right >= n) {
      throw CorruptPayload("tree child index out of range");
    }
  }
  return t;
}

namespace {

nlohmann::json parse_payload(const std::string& payload, std::string_view format) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(payload);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("model payload: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format) {
    throw CorruptPayload("model payload is not a " + std::string(format) + " document");
  }
  if (j.value("format_version", -1) != kModelFormatVersion) {
    throw VersionMismatch("model format_version " + std::to_string(j.value("format_version", -1)) +
                          ", expected " + std::to_string(kModelFormatVersion));
  }
  return j;
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("model payload: ") + e.what());
  }
}

}  // namespace

std::string serialize(const GbmModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) trees.push_back(to_json(t));
  return nlohmann::json{{"format", "dqloop.gbm"},
                        {"format_version", kModelFormatVersion},
                        {"schema_hash", m.schema_hash},
                        {"n_features", m.n_features},
                        {"base_score", m.base_score},
                        {"learning_rate", m.learning_rate},
                        {"train_loss", m.train_loss},
                        {"validation_loss", m.validation_loss},
                        {"trees", trees}}
      .dump();
}

GbmModel deserialize_gbm(const std::string& payload) {
  const auto j = parse_payload(payload, "dqloop.gbm");
  return guarded([&] {
    GbmModel m;
    m.schema_hash = j.at("schema_hash").get<std::string>();
    m.n_features = j.at("n_features").get<std::size_t>();
    m.base_score = j.at("base_score").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.train_loss = j.at("train_loss").get<std::vector<double>>();
    m.validation_loss = j.at("validation_loss").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
    for (const auto& t : m.trees) {
      for (const auto& node : t.nodes) {
        if (!node.is_leaf() && static_cast<std::size_t>(node.feature) >= m.n_features) {
          throw CorruptPayload("tree feature index out of range");
        }
      }
    }
    return m;
  });
}

std::string serialize(const SimpleModel& m) {
  return nlohmann::json{{"format", "dqloop.simple"},
                        {"format_version", kModelFormatVersion},
                        {"kind", std::string(to_string(m.kind))},
                        {"schema_hash", m.schema_hash},
                        {"n_features", m.n_features},
                        {"tree", to_json(m.tree)},
                        {"weights", m.weights},
                        {"intercept", m.intercept},
                        {"converged", m.converged},
                        {"iterations", m.iterations}}
      .dump();
}

SimpleModel deserialize_simple(const std::string& payload) {
  const auto j = parse_payload(payload, "dqloop.simple");
  return guarded([&] {
    SimpleModel m;
    m.kind = j.at("kind").get<std::string>() == "glm" ? SimpleKind::glm : SimpleKind::tree;
    m.schema_hash = j.at("schema_hash").get<std::string>();
    m.n_features = j.at("n_features").get<std::size_t>();
    if (m.kind == SimpleKind::tree) m.tree = tree_from_json(j.at("tree"));
    m.weights = j.at("weights").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<double>();
    m.converged = j.at("converged").get<bool>();
    m.iterations = j.at("iterations").get<int>();
    if (m.kind == SimpleKind::glm && m.weights.size() != m.n_features) {
      throw CorruptPayload("GLM weight count != feature count");
    }
    return m;
  });
}

std::string serialize(const MetaModel& m) {
  return nlohmann::json{{"format", "dqloop.meta"},
                        {"format_version", kModelFormatVersion},
                        {"weights", m.weights},
                        {"bias", m.bias},
                        {"converged", m.converged},
                        {"iterations", m.iterations}}
      .dump();
}

MetaModel deserialize_meta(const std::string& payload) {
  const auto j = parse_payload(payload, "dqloop.meta");
  return guarded([&] {
    MetaModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (m.weights.size() != kMetaClasses * kNumExceptionTypes || bias.size() != kMetaClasses) {
      throw CorruptPayload("meta model dimensions");
    }
    std::copy(bias.begin(), bias.end(), m.bias.begin());
    m.converged = j.at("converged").get<bool>();
    m.iterations = j.at("iterations").get<int>();
    return m;
  });
}

}  // namespace dqloop
