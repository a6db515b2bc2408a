#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "arm/model.hpp"

namespace arm {

inline constexpr int kModelSchemaVersion = 1;

nlohmann::json feature_spec_to_json(const FeatureSpec& spec);
FeatureSpec feature_spec_from_json(const nlohmann::json& j);

/// Versioned model document. Doubles are written in shortest round-trip
/// form, so deserialize(serialize(m)) reproduces every coefficient bit for bit.
nlohmann::json model_to_json(const ArmModel& model);
/// Throws SchemaVersionMismatch or MalformedDocument.
ArmModel model_from_json(const nlohmann::json& doc);

std::string serialize_model(const ArmModel& model);
ArmModel deserialize_model(std::string_view document);

void save_model(const ArmModel& model, const std::string& path);
ArmModel load_model(const std::string& path);

/// FNV-1a 64-bit digest.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ull);
std::string hex64(std::uint64_t v);

/// Stable content hash of the serialized model, as 16 hex digits.
std::string model_hash(const ArmModel& model);

/// Per-subscale scoring tables plus the second layer, as JSON.
nlohmann::json model_topology(const ArmModel& model);

}  // namespace arm
