#include <optional>
#include <sstream>
#include <string>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "arm/dataset.hpp"
#include "arm/errors.hpp"
#include "arm/explain_db.hpp"
#include "arm/model_io.hpp"
#include "arm/schema.hpp"
#include "arm/service.hpp"
#include "arm/train.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

arm::Schema schema_or_default(const std::string& schema_json) {
  return schema_json.empty() ? arm::fico_schema() : arm::schema_from_json(json::parse(schema_json));
}

/// Model, dataset and db behind the same handlers the HTTP server uses.
class Engine {
 public:
  Engine(const std::string& model_json, const std::optional<std::string>& data_csv,
         const std::optional<std::string>& db_path, const std::string& schema_json) {
    auto model = arm::deserialize_model(model_json);
    const auto schema = arm::schema_of(model, schema_or_default(schema_json));
    std::optional<arm::RawDataset> data;
    if (data_csv) data = arm::load_csv(*data_csv, schema);
    std::optional<arm::ExplanationDb> db;
    if (db_path) db = arm::ExplanationDb::load(*db_path);
    service_.emplace(std::move(model), std::move(data), std::move(db), schema);
  }

  py::tuple call(const std::string& route, const std::string& body) {
    arm::HttpResponse r;
    if (route == "model")
      r = service_->get_model();
    else if (route == "health")
      r = service_->health();
    else if (route == "predict")
      r = service_->predict(body);
    else if (route == "explain")
      r = service_->explain(body);
    else if (route == "cases")
      r = service_->cases(body);
    else
      throw py::value_error("unknown route " + route);
    return py::make_tuple(r.status, r.body);
  }

  std::string model_hash() const { return service_->model_hash(); }

 private:
  std::optional<arm::Service> service_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-layer additive risk models with rule and case explanations";

  py::register_exception<arm::Error>(m, "ArmError");

  m.def(
      "generate_csv",
      [](const std::string& spec_json, const std::string& out_path, const std::string& schema_json) {
        const auto spec = arm::synthetic_spec_from_json(json::parse(spec_json.empty() ? "{}" : spec_json));
        const auto data = arm::generate_synthetic(spec);
        arm::save_csv(out_path, data, schema_or_default(schema_json));
        return data.size();
      },
      py::arg("spec_json"), py::arg("out_path"), py::arg("schema_json") = "",
      "Write a synthetic dataset; returns the row count.");

  m.def(
      "train",
      [](const std::string& csv_path, const std::string& config_json, const std::string& schema_json) {
        const auto schema = schema_or_default(schema_json);
        const auto config = arm::train_config_from_json(json::parse(config_json.empty() ? "{}" : config_json));
        std::string model_json, report_json;
        {
          py::gil_scoped_release release;
          const auto data = arm::load_csv(csv_path, schema);
          const auto fitted = arm::fit_model(schema, data, config);
          model_json = arm::serialize_model(fitted.model);
          report_json = fitted.report.to_json().dump();
        }
        return py::make_tuple(model_json, report_json);
      },
      py::arg("csv_path"), py::arg("config_json") = "", py::arg("schema_json") = "",
      "Fit a model; returns (model_json, report_json).");

  m.def(
      "evaluate",
      [](const std::string& model_json, const std::string& csv_path, std::size_t splits, std::uint64_t seed,
         const std::string& config_json) {
        const auto model = arm::deserialize_model(model_json);
        const auto schema = arm::schema_of(model, arm::fico_schema());
        const auto config = arm::train_config_from_json(json::parse(config_json.empty() ? "{}" : config_json));
        const auto data = arm::load_csv(csv_path, schema);
        py::gil_scoped_release release;
        return arm::evaluate(schema, data, config, splits, 0.2, seed, &model.binarizer()).to_json().dump();
      },
      py::arg("model_json"), py::arg("csv_path"), py::arg("splits") = 5, py::arg("seed") = 7,
      py::arg("config_json") = "");

  m.def(
      "scoring_table",
      [](const std::string& model_json, const std::string& feature) {
        const auto model = arm::deserialize_model(model_json);
        const auto p = model.binarizer().feature_index(feature);
        if (!p) throw py::key_error(feature);
        return model.scoring_table(model.subscale_of_feature(*p), *p).to_csv();
      },
      py::arg("model_json"), py::arg("feature"));

  m.def("model_hash", [](const std::string& model_json) { return arm::model_hash(arm::deserialize_model(model_json)); });

  m.def("fico_schema", [] { return arm::schema_to_json(arm::fico_schema()).dump(); });

  py::class_<Engine>(m, "Engine")
      .def(py::init<const std::string&, const std::optional<std::string>&, const std::optional<std::string>&,
                    const std::string&>(),
           py::arg("model_json"), py::arg("data_csv") = py::none(), py::arg("db_path") = py::none(),
           py::arg("schema_json") = "")
      .def("call", &Engine::call, py::arg("route"), py::arg("body") = "",
           "Run a service handler; returns (status, json_body).")
      .def_property_readonly("model_hash", &Engine::model_hash);
}
