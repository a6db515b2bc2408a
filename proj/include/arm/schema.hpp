#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "arm/binarize.hpp"

namespace arm {

struct SubscaleDef {
  std::string name;
  std::vector<std::string> features;
};

/// Dataset layout plus model structure: which columns exist, how labels and
/// missing values are coded, monotone directions, and the subscale partition.
struct Schema {
  std::string label_column = "label";
  /// Accepted label spellings. When writing, the first spelling of each
  /// class is used.
  std::vector<std::pair<std::string, std::uint8_t>> label_map = {{"1", 1}, {"0", 0}};
  std::vector<FeatureSpec> features;
  std::vector<SubscaleDef> subscales;

  std::vector<std::string> feature_names() const;
  std::string label_name(std::uint8_t label) const;
};

/// The 23-feature HELOC layout with 10 subscales, RiskPerformance
/// Bad -> 1 / Good -> 0, and special values {-7, -8, -9} treated as missing.
Schema fico_schema();

nlohmann::json schema_to_json(const Schema& schema);
/// Top-level "missing_codes" apply to every feature that does not list its own.
Schema schema_from_json(const nlohmann::json& j);
Schema load_schema(const std::string& path);

}  // namespace arm
