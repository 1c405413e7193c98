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

// Python bindings: config, synthetic data, features, training, scoring and
// explanations. JSON-shaped results cross the boundary as Python dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dqloop/config.hpp"
#include "dqloop/datagen.hpp"
#include "dqloop/explain.hpp"
#include "dqloop/pipeline.hpp"
#include "dqloop/rank.hpp"

namespace py = pybind11;
using namespace dqloop;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

ExceptionType type_arg(const std::string& name) {
  auto t = parse_exception_type(name);
  if (!t) throw py::value_error("unknown exception type: " + name);
  return *t;
}

py::array_t<double> to_array(const DenseMatrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::vector<double> row_arg(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                            std::size_t expected) {
  if (a.ndim() != 1 || static_cast<std::size_t>(a.size()) != expected)
    throw py::value_error("row must be 1-d with " + std::to_string(expected) + " values");
  return {a.data(), a.data() + a.size()};
}

struct Dataset {
  InjectionResult data;
  Month last() const { return data.corpus.months().back(); }
};

Month month_or_last(const Dataset& d, const std::optional<std::string>& m) {
  return m ? parse_month(*m) : d.last();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "dqloop native core";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.def("default_config_text", &default_config_text);
  m.def("exception_types", [] {
    std::vector<std::string> out;
    for (auto t : kAllExceptionTypes) out.emplace_back(to_string(t));
    return out;
  });

  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def_static(
          "from_text",
          [](const std::string& text) {
            Config c;
            c.apply(parse_config_text(text));
            c.validate();
            return c;
          },
          py::arg("text"))
      .def_static(
          "load", [](const std::optional<std::filesystem::path>& p) { return load_config(p); },
          py::arg("path") = py::none())
      .def("to_dict", [](const Config& c) { return to_py(c.to_json()); })
      .def("hash", &Config::hash)
      .def_property(
          "seed", [](const Config& c) { return c.gen.seed; },
          [](Config& c, std::uint64_t s) { c.gen.seed = s; })
      .def_property(
          "n_instruments", [](const Config& c) { return c.gen.n_instruments; },
          [](Config& c, std::size_t n) { c.gen.n_instruments = n; })
      .def_property(
          "n_months", [](const Config& c) { return c.gen.n_months; },
          [](Config& c, std::size_t n) { c.gen.n_months = n; })
      .def_property(
          "n_rounds", [](const Config& c) { return c.train.n_rounds; },
          [](Config& c, int n) { c.train.n_rounds = n; });

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n_snapshots", [](const Dataset& d) { return d.data.corpus.snapshots.size(); })
      .def_property_readonly("n_audits", [](const Dataset& d) { return d.data.audit_log.size(); })
      .def_property_readonly("n_truth", [](const Dataset& d) { return d.data.truth.entries.size(); })
      .def_property_readonly("months", [](const Dataset& d) {
        std::vector<std::string> out;
        for (auto mo : d.data.corpus.months()) out.push_back(format_month(mo));
        return out;
      })
      .def("write_corpus", [](const Dataset& d, const std::filesystem::path& p) { write_corpus_jsonl(d.data.corpus, p); })
      .def("write_truth", [](const Dataset& d, const std::filesystem::path& p) { write_truth_jsonl(d.data.truth, p); });

  m.def(
      "generate",
      [](const Config& c) {
        py::gil_scoped_release release;
        return Dataset{inject_exceptions(generate_universe(c.gen), c.gen)};
      },
      py::arg("config"));

  py::class_<FeatureMatrix>(m, "Features")
      .def_property_readonly("rows", &FeatureMatrix::rows)
      .def("feature_names", [](const FeatureMatrix& fm, const std::string& t) { return fm.schema(type_arg(t)).names(); })
      .def("matrix", [](const FeatureMatrix& fm, const std::string& t) { return to_array(fm.view(type_arg(t))); })
      .def("labels",
           [](const FeatureMatrix& fm, const std::string& t) {
             const auto& l = fm.labels[index_of(type_arg(t))];
             py::array_t<std::uint8_t> out(l.size());
             std::copy(l.begin(), l.end(), out.mutable_data());
             return out;
           })
      .def_property_readonly("split",
                             [](const FeatureMatrix& fm) {
                               std::vector<std::string> out;
                               for (auto s : fm.split) out.emplace_back(to_string(s));
                               return out;
                             })
      .def_property_readonly("instrument_ids", [](const FeatureMatrix& fm) { return fm.instrument_ids; })
      .def_property_readonly("months", [](const FeatureMatrix& fm) {
        std::vector<std::string> out;
        for (auto mo : fm.months) out.push_back(format_month(mo));
        return out;
      });

  m.def(
      "prepare_features",
      [](const Dataset& d, const Config& c, const std::optional<std::string>& cutoff) {
        const Month mo = month_or_last(d, cutoff);
        py::gil_scoped_release release;
        return prepare_features(d.data.corpus, d.data.audit_log, mo, c);
      },
      py::arg("dataset"), py::arg("config"), py::arg("cutoff") = py::none());

  py::class_<ModelBundle>(m, "Bundle")
      .def_readonly("version", &ModelBundle::version)
      .def_property_readonly("cutoff", [](const ModelBundle& b) { return format_month(b.cutoff); })
      .def("predict_proba",
           [](const ModelBundle& b, const std::string& t,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
             if (x.ndim() != 2) throw py::value_error("expected a 2-d array");
             DenseMatrix m(x.shape(0), x.shape(1));
             std::copy(x.data(), x.data() + x.size(), m.data().begin());
             const auto p = b.model(type_arg(t)).predict_proba(m);
             py::array_t<double> out(p.size());
             std::copy(p.begin(), p.end(), out.mutable_data());
             return out;
           })
      .def("save", [](const ModelBundle& b, const std::filesystem::path& dir) { save_bundle(b, dir); });

  m.def(
      "train",
      [](const FeatureMatrix& fm, const Config& c, const std::optional<std::string>& cutoff) {
        Month mo = fm.months.empty() ? Month{} : *std::max_element(fm.months.begin(), fm.months.end());
        if (cutoff) mo = parse_month(*cutoff);
        py::gil_scoped_release release;
        return train_bundle(fm, c.train, mo);
      },
      py::arg("features"), py::arg("config"), py::arg("cutoff") = py::none());
  m.def("load_bundle", [](const std::filesystem::path& dir) { return load_bundle(dir); });

  m.def(
      "evaluate",
      [](const ModelBundle& b, const FeatureMatrix& fm, double threshold) {
        return to_py(evaluate_models(b.pointers(), fm, threshold).to_json());
      },
      py::arg("bundle"), py::arg("features"), py::arg("threshold") = 0.5);

  m.def(
      "score_month",
      [](const ModelBundle& b, const Dataset& d, const std::optional<std::string>& month) {
        const Month mo = month_or_last(d, month);
        const auto fm = serving_matrix(d.data.corpus, b);
        const auto run = score_month(b, fm, mo);
        nlohmann::json out{{"run_id", run.run_id}, {"model_version", run.model_version},
                           {"month", format_month(run.month)}, {"queues", nlohmann::json::object()}};
        for (auto t : kAllExceptionTypes) {
          auto& q = out["queues"][std::string(to_string(t))] = nlohmann::json::array();
          for (const auto& r : run.queues[index_of(t)]) q.push_back(r.to_json());
        }
        return to_py(out);
      },
      py::arg("bundle"), py::arg("dataset"), py::arg("month") = py::none());

  m.def(
      "explain",
      [](const ModelBundle& b, const FeatureMatrix& fm, const std::string& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& row) {
        const auto type = type_arg(t);
        const auto names = fm.schema(type).names();
        const auto x = row_arg(row, names.size());
        return to_py(shap_local(b.model(type), x).to_json(names));
      },
      py::arg("bundle"), py::arg("features"), py::arg("type"), py::arg("row"));

  m.def(
      "counterfactuals",
      [](const ModelBundle& b, const FeatureMatrix& fm, const std::string& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& row, std::size_t n,
         double threshold) {
        const auto type = type_arg(t);
        const auto x = row_arg(row, fm.schema(type).names().size());
        CounterfactualOptions opts;
        opts.n = n;
        opts.threshold = threshold;
        const auto policy = make_policy(fm, type);
        CounterfactualResult res;
        {
          py::gil_scoped_release release;
          res = find_counterfactuals(b.model(type), x, policy, opts);
        }
        return to_py(res.to_json());
      },
      py::arg("bundle"), py::arg("features"), py::arg("type"), py::arg("row"), py::arg("n") = 3,
      py::arg("threshold") = 0.5);

  m.def("rank_score", &rank_score, py::arg("probability"), py::arg("amount"));
  m.def("dcg", &dcg, py::arg("relevances"), py::arg("p"));
  m.def("ndcg", &ndcg, py::arg("relevances"), py::arg("p"));
}
