#include "arm/schema.hpp"

#include <fstream>

#include "arm/errors.hpp"
#include "arm/model_io.hpp"

namespace arm {

using nlohmann::json;

std::vector<std::string> Schema::feature_names() const {
  std::vector<std::string> names;
  names.reserve(features.size());
  for (const auto& f : features) names.push_back(f.name);
  return names;
}

std::string Schema::label_name(std::uint8_t label) const {
  for (const auto& [text, value] : label_map)
    if (value == label) return text;
  return std::to_string(label);
}

Schema fico_schema() {
  using M = Monotonicity;
  const std::vector<double> codes = {-7, -8, -9};
  const std::vector<std::pair<const char*, M>> features = {
      {"ExternalRiskEstimate", M::Decreasing},
      {"MSinceOldestTradeOpen", M::Decreasing},
      {"MSinceMostRecentTradeOpen", M::Decreasing},
      {"AverageMInFile", M::Decreasing},
      {"NumSatisfactoryTrades", M::Decreasing},
      {"NumTrades60Ever2DerogPubRec", M::Increasing},
      {"NumTrades90Ever2DerogPubRec", M::Increasing},
      {"PercentTradesNeverDelq", M::Decreasing},
      {"MSinceMostRecentDelq", M::Decreasing},
      {"MaxDelq2PublicRecLast12M", M::Decreasing},
      {"MaxDelqEver", M::Decreasing},
      {"NumTotalTrades", M::None},
      {"NumTradesOpeninLast12M", M::Increasing},
      {"PercentInstallTrades", M::None},
      {"MSinceMostRecentInqexcl7days", M::Decreasing},
      {"NumInqLast6M", M::Increasing},
      {"NumInqLast6Mexcl7days", M::Increasing},
      {"NetFractionRevolvingBurden", M::Increasing},
      {"NetFractionInstallBurden", M::Increasing},
      {"NumRevolvingTradesWBalance", M::None},
      {"NumInstallTradesWBalance", M::None},
      {"NumBank2NatlTradesWHighUtilization", M::Increasing},
      {"PercentTradesWBalance", M::None},
  };
  Schema s;
  s.label_column = "RiskPerformance";
  s.label_map = {{"Bad", 1}, {"Good", 0}};
  for (const auto& [name, mono] : features) {
    FeatureSpec f;
    f.name = name;
    f.monotonicity = mono;
    f.missing_codes = codes;
    s.features.push_back(std::move(f));
  }
  s.subscales = {
      {"ExternalRiskEstimate", {"ExternalRiskEstimate"}},
      {"TradeOpenTime", {"MSinceOldestTradeOpen", "MSinceMostRecentTradeOpen", "AverageMInFile"}},
      {"NumSatisfactoryTrades", {"NumSatisfactoryTrades"}},
      {"TradeFrequency", {"NumTotalTrades", "NumTradesOpeninLast12M"}},
      {"Delinquency",
       {"MSinceMostRecentDelq", "MaxDelq2PublicRecLast12M", "MaxDelqEver", "PercentTradesNeverDelq"}},
      {"DerogatoryRecords", {"NumTrades60Ever2DerogPubRec", "NumTrades90Ever2DerogPubRec"}},
      {"Installment", {"PercentInstallTrades", "NetFractionInstallBurden", "NumInstallTradesWBalance"}},
      {"Inquiry", {"MSinceMostRecentInqexcl7days", "NumInqLast6M", "NumInqLast6Mexcl7days"}},
      {"RevolvingBalance", {"NetFractionRevolvingBurden", "NumRevolvingTradesWBalance"}},
      {"Utilization", {"NumBank2NatlTradesWHighUtilization", "PercentTradesWBalance"}},
  };
  return s;
}

json schema_to_json(const Schema& schema) {
  json labels = json::array();
  for (const auto& [text, value] : schema.label_map) labels.push_back({text, value});
  json features = json::array();
  for (const auto& f : schema.features) features.push_back(feature_spec_to_json(f));
  json subscales = json::array();
  for (const auto& s : schema.subscales)
    subscales.push_back({{"name", s.name}, {"features", s.features}});
  return json{{"label_column", schema.label_column},
              {"label_map", labels},
              {"features", features},
              {"subscales", subscales}};
}

Schema schema_from_json(const json& j) {
  try {
    Schema s;
    s.label_column = j.value("label_column", s.label_column);
    if (j.contains("label_map")) {
      s.label_map.clear();
      const auto& m = j.at("label_map");
      if (m.is_object()) {
        for (const auto& [k, v] : m.items()) s.label_map.emplace_back(k, v.get<std::uint8_t>());
      } else {
        for (const auto& e : m)
          s.label_map.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::uint8_t>());
      }
    }
    const auto shared_codes = j.value("missing_codes", std::vector<double>{});
    for (const auto& f : j.at("features")) {
      FeatureSpec spec = feature_spec_from_json(f);
      if (!f.contains("missing_codes")) spec.missing_codes = shared_codes;
      spec.validate();
      s.features.push_back(std::move(spec));
    }
    for (const auto& sub : j.value("subscales", json::array()))
      s.subscales.push_back(
          {sub.at("name").get<std::string>(), sub.at("features").get<std::vector<std::string>>()});
    return s;
  } catch (const json::exception& e) {
    throw MalformedDocument(std::string("schema: ") + e.what());
  }
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MalformedDocument(path + ": " + e.what());
  }
  return schema_from_json(j);
}

}  // namespace arm
