#include "arm/model_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "arm/errors.hpp"

namespace arm {

using nlohmann::json;

nlohmann::json feature_spec_to_json(const FeatureSpec& spec) {
  return json{{"name", spec.name},
              {"monotonicity", std::string(to_string(spec.monotonicity))},
              {"thresholds", spec.thresholds},
              {"missing_codes", spec.missing_codes},
              {"not_missing_indicator", spec.include_not_missing_indicator}};
}

FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
  FeatureSpec s;
  s.name = j.at("name").get<std::string>();
  s.monotonicity = monotonicity_from_string(j.value("monotonicity", std::string("none")));
  s.thresholds = j.value("thresholds", std::vector<double>{});
  s.missing_codes = j.value("missing_codes", std::vector<double>{});
  s.include_not_missing_indicator = j.value("not_missing_indicator", true);
  return s;
}

nlohmann::json model_to_json(const ArmModel& model) {
  json features = json::array();
  for (const auto& s : model.binarizer().specs()) features.push_back(feature_spec_to_json(s));
  json subscales = json::array();
  for (const auto& s : model.subscales()) {
    json names = json::array();
    for (std::size_t p : s.features) names.push_back(model.binarizer().specs()[p].name);
    subscales.push_back(
        {{"name", s.name}, {"features", names}, {"coefficients", s.coefficients}, {"bias", s.bias}});
  }
  return json{{"format", "additive-risk-model"},
              {"schema_version", kModelSchemaVersion},
              {"features", features},
              {"subscales", subscales},
              {"second_layer", {{"weights", model.weights()}, {"bias", model.bias()}}}};
}

ArmModel model_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw MalformedDocument("model document must be a JSON object");
  if (!doc.contains("schema_version")) throw MalformedDocument("missing schema_version");
  int version = 0;
  try {
    version = doc.at("schema_version").get<int>();
  } catch (const json::exception& e) {
    throw MalformedDocument(e.what());
  }
  if (version != kModelSchemaVersion)
    throw SchemaVersionMismatch("model schema version " + std::to_string(version) +
                                ", expected " + std::to_string(kModelSchemaVersion));
  try {
    std::vector<FeatureSpec> specs;
    for (const auto& f : doc.at("features")) specs.push_back(feature_spec_from_json(f));
    Binarizer binarizer(std::move(specs));
    std::vector<Subscale> subscales;
    for (const auto& s : doc.at("subscales")) {
      Subscale sub;
      sub.name = s.at("name").get<std::string>();
      for (const auto& n : s.at("features")) {
        auto p = binarizer.feature_index(n.get<std::string>());
        if (!p) throw MalformedDocument("subscale " + sub.name + " references unknown feature");
        sub.features.push_back(*p);
      }
      sub.coefficients = s.at("coefficients").get<std::vector<double>>();
      sub.bias = s.at("bias").get<double>();
      subscales.push_back(std::move(sub));
    }
    const auto& layer = doc.at("second_layer");
    return ArmModel(std::move(binarizer), std::move(subscales),
                    layer.at("weights").get<std::vector<double>>(), layer.at("bias").get<double>());
  } catch (const json::exception& e) {
    throw MalformedDocument(e.what());
  } catch (const InvalidModel& e) {
    throw MalformedDocument(e.what());
  }
}

std::string serialize_model(const ArmModel& model) { return model_to_json(model).dump(2); }

ArmModel deserialize_model(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw MalformedDocument(e.what());
  }
  return model_from_json(doc);
}

void save_model(const ArmModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << serialize_model(model) << '\n';
}

ArmModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

std::string model_hash(const ArmModel& model) { return hex64(fnv1a(model_to_json(model).dump())); }

namespace {

json bound(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

}  // namespace

nlohmann::json model_topology(const ArmModel& model) {
  json doc = model_to_json(model);
  json tables = json::array();
  for (std::size_t k = 0; k < model.subscale_count(); ++k) {
    json per_feature = json::array();
    for (std::size_t p : model.subscales()[k].features) {
      const auto t = model.scoring_table(k, p);
      json rows = json::array();
      for (const auto& r : t.rows)
        rows.push_back({{"label", r.label},
                        {"lower", bound(r.lower)},
                        {"upper", bound(r.upper)},
                        {"lower_closed", r.lower_closed},
                        {"upper_closed", r.upper_closed},
                        {"points", r.points}});
      per_feature.push_back(
          {{"feature", t.spec.name}, {"rows", rows}, {"missing_points", t.missing_points}});
    }
    tables.push_back({{"subscale", model.subscales()[k].name}, {"tables", per_feature}});
  }
  doc["scoring_tables"] = tables;
  doc["feature_count"] = model.feature_count();
  doc["subscale_count"] = model.subscale_count();
  doc["model_hash"] = model_hash(model);
  return doc;
}

}  // namespace arm
