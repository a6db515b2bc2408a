#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "arm/cases.hpp"
#include "arm/dataset.hpp"
#include "arm/explain_db.hpp"
#include "arm/model.hpp"
#include "arm/schema.hpp"

namespace httplib {
class Server;
}

namespace arm {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

struct ServiceConfig {
  ExplainSettings explain;
  std::size_t n_subscales = 2;
  std::size_t n_factors = 2;
  std::size_t n_cases = 5;
};

nlohmann::json prediction_to_json(const Prediction& p);

/// Parses {"features": {name: number | "missing" | null}} into schema order.
/// Unknown or absent names are collected rather than thrown.
struct ParsedFeatures {
  std::vector<double> values;
  std::vector<std::string> unknown;
  std::vector<std::string> missing;
  std::vector<std::string> unparsable;
};
ParsedFeatures parse_features(const nlohmann::json& body, const Binarizer& binarizer);

/// Request handlers over a read-only model, dataset and db. Handlers are
/// plain functions of the request body so they can be exercised without a socket.
class Service {
 public:
  Service(std::optional<ArmModel> model, std::optional<RawDataset> data, std::optional<ExplanationDb> db,
          Schema schema, ServiceConfig config = {});

  bool has_model() const { return model_.has_value(); }
  const std::string& model_hash() const { return model_hash_; }
  const ExplainData* explain_data() const { return data_ ? &explain_data_ : nullptr; }
  const ExplanationDb* db() const { return db_ ? &*db_ : nullptr; }

  HttpResponse get_model(const std::string& if_none_match = "") const;
  HttpResponse health() const;
  HttpResponse predict(const std::string& body) const;
  HttpResponse explain(const std::string& body);
  HttpResponse cases(const std::string& body);

  void register_routes(httplib::Server& server);
  /// Blocks until the server stops.
  void listen(const std::string& host, int port, const std::string& static_dir = "");

 private:
  struct Query {
    std::vector<double> raw;
    std::vector<std::uint8_t> bits;
    std::uint8_t label = 0;
  };
  std::optional<HttpResponse> parse_query(const std::string& body, Query& q) const;
  nlohmann::json explanation_json(const Explanation& e, const Query& q) const;
  Schema schema_of_features() const;

  std::optional<ArmModel> model_;
  std::optional<RawDataset> data_;
  std::optional<ExplanationDb> db_;
  Schema schema_;
  ServiceConfig config_;
  std::string model_hash_;
  std::string topology_;
  ExplainData explain_data_;
};

}  // namespace arm
