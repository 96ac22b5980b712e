#include <optional>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dwfs/dwfs.hpp"
#include "dwfs/graph.hpp"
#include "dwfs/metrics.hpp"
#include "dwfs/pipeline.hpp"

namespace py = pybind11;
using nlohmann::json;

// Structured values cross the boundary as JSON text; the python package decodes them.
namespace {

dwfs::PipelineConfig config_from(const std::string& text, const std::string& base_dir) {
  return dwfs::PipelineConfig::from_json(json::parse(text), base_dir);
}

std::string score(const std::vector<double>& importances, double accuracy,
                  const std::vector<std::vector<double>>& obf_importances, const std::vector<double>& obf_accuracy,
                  double beta, std::optional<double> theta) {
  if (obf_importances.size() != obf_accuracy.size())
    throw dwfs::Error(dwfs::ErrorKind::Argument, "one accuracy per obfuscated importance vector is required");
  dwfs::FeatureSchema schema = dwfs::FeatureSchema::from_names([&] {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < importances.size(); ++i) names.push_back("f" + std::to_string(i));
    return names;
  }());
  std::vector<dwfs::StrategyImpact> per;
  for (std::size_t j = 0; j < obf_importances.size(); ++j)
    per.push_back({"s" + std::to_string(j), {obf_importances[j], obf_accuracy[j]}, 0.0, 0.0});
  dwfs::DwfsConfig cfg;
  cfg.beta = beta;
  cfg.theta = theta;
  const auto r = dwfs::combine_profiles(schema, {importances, accuracy}, std::move(per), cfg);
  json out;
  out["scores"] = r.scores;
  out["selected"] = r.selected;
  out["delta_importance"] = r.delta_importance;
  out["alpha_bar"] = r.alpha_bar;
  out["w1"] = r.w1;
  out["w2"] = r.w2;
  out["theta"] = r.theta;
  return out.dump();
}

std::string sbs(const std::string& graph_json, std::size_t hops, const std::string& origin) {
  dwfs::SbsConfig cfg;
  cfg.hops = hops;
  if (origin == "neighbors") {
    cfg.origin = dwfs::HopOrigin::Neighbors;
  } else if (origin != "sensitive") {
    throw dwfs::Error(dwfs::ErrorKind::Argument, "hop origin must be 'sensitive' or 'neighbors', got '" + origin + "'");
  }
  return dwfs::extract_sbs(dwfs::CallGraph::from_json(json::parse(graph_json)), cfg).to_json().dump();
}

std::string metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, std::size_t classes) {
  const auto cm = dwfs::confusion(y_true, y_pred, classes);
  json out;
  out["confusion"] = cm.to_json();
  out["metrics"] = dwfs::family_metrics(cm).to_json();
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the dwfs package";

  static py::exception<dwfs::Error> error(m, "DwfsError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const dwfs::Error& e) {
      PyErr_SetString(error.ptr(), (std::string(dwfs::to_string(e.kind())) + ": " + e.what()).c_str());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("score", &score, py::arg("importances"), py::arg("accuracy"), py::arg("obf_importances"),
        py::arg("obf_accuracy"), py::arg("beta") = 0.5, py::arg("theta") = py::none());
  m.def("extract_sbs", &sbs, py::arg("graph_json"), py::arg("hops") = 0, py::arg("origin") = "sensitive");
  m.def("family_metrics", &metrics, py::arg("y_true"), py::arg("y_pred"), py::arg("classes"));

  auto step = [](auto fn) {
    return [fn](const std::string& config_json, const std::string& base_dir) {
      const auto cfg = config_from(config_json, base_dir);
      py::gil_scoped_release release;
      return fn(cfg);
    };
  };
  m.def("gen", step([](const dwfs::PipelineConfig& c) {
          dwfs::cmd_gen(c);
          return c.corpus_manifest().string();
        }),
        py::arg("config_json"), py::arg("base_dir") = "");
  m.def("select", step([](const dwfs::PipelineConfig& c) { return dwfs::cmd_select(c).to_json().dump(); }),
        py::arg("config_json"), py::arg("base_dir") = "");
  m.def("sbs", step([](const dwfs::PipelineConfig& c) { return dwfs::cmd_sbs(c).to_json().dump(); }),
        py::arg("config_json"), py::arg("base_dir") = "");
  m.def("report", step([](const dwfs::PipelineConfig& c) { return dwfs::cmd_report(c).to_json().dump(); }),
        py::arg("config_json"), py::arg("base_dir") = "");
  m.def(
      "train",
      [](const std::string& config_json, const std::string& model, const std::string& base_dir) {
        const auto cfg = config_from(config_json, base_dir);
        py::gil_scoped_release release;
        return dwfs::cmd_train(cfg, model).log.to_csv();
      },
      py::arg("config_json"), py::arg("model"), py::arg("base_dir") = "");
  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& model, const std::string& base_dir) {
        const auto cfg = config_from(config_json, base_dir);
        py::gil_scoped_release release;
        return dwfs::cmd_eval(cfg, model).to_json().dump();
      },
      py::arg("config_json"), py::arg("model"), py::arg("base_dir") = "");
}
