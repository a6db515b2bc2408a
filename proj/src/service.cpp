#include "arm/service.hpp"

#include <cmath>
#include <limits>

#include <httplib.h>

#include "arm/errors.hpp"
#include "arm/model_io.hpp"

namespace arm {

using nlohmann::json;

namespace {

HttpResponse json_response(int status, const json& body) {
  return {status, body.dump(), {{"Content-Type", "application/json"}}};
}

HttpResponse error_response(int status, const std::string& error, const std::string& message,
                            json extra = json::object()) {
  extra["error"] = error;
  extra["message"] = message;
  return json_response(status, extra);
}

}  // namespace

json prediction_to_json(const Prediction& p) {
  json subs = json::array();
  for (const auto& s : p.subscales)
    subs.push_back(json{{"name", s.name},
                        {"points", s.points},
                        {"risk", s.risk},
                        {"weight", s.weight},
                        {"weighted", s.weighted}});
  json important = json::array();
  for (const auto& s : p.important_factors) {
    json factors = json::array();
    for (const auto& f : s.factors)
      factors.push_back(json{{"column", f.column}, {"description", f.description}, {"contribution", f.contribution}});
    important.push_back(json{{"subscale", s.subscale}, {"name", s.name}, {"weighted", s.weighted}, {"factors", factors}});
  }
  return json{{"probability", p.probability},
              {"logit", p.logit},
              {"label", p.probability >= 0.5 ? 1 : 0},
              {"subscales", subs},
              {"important_factors", important}};
}

ParsedFeatures parse_features(const json& body, const Binarizer& binarizer) {
  ParsedFeatures out;
  const auto& specs = binarizer.specs();
  out.values.assign(specs.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> seen(specs.size(), false);
  if (!body.is_object() || !body.contains("features") || !body.at("features").is_object())
    throw MalformedDocument("request body must be {\"features\": {name: value}}");
  for (const auto& [name, value] : body.at("features").items()) {
    auto p = binarizer.feature_index(name);
    if (!p) {
      out.unknown.push_back(name);
      continue;
    }
    seen[*p] = true;
    if (value.is_number()) {
      const double v = value.get<double>();
      out.values[*p] = specs[*p].is_missing(v) ? std::numeric_limits<double>::quiet_NaN() : v;
    } else if (value.is_null() || (value.is_string() && value.get<std::string>() == "missing")) {
      out.values[*p] = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.unparsable.push_back(name);
    }
  }
  for (std::size_t p = 0; p < specs.size(); ++p)
    if (!seen[p]) out.missing.push_back(specs[p].name);
  return out;
}

Service::Service(std::optional<ArmModel> model, std::optional<RawDataset> data, std::optional<ExplanationDb> db,
                 Schema schema, ServiceConfig config)
    : model_(std::move(model)),
      data_(std::move(data)),
      db_(std::move(db)),
      schema_(std::move(schema)),
      config_(std::move(config)) {
  if (!model_) return;
  model_hash_ = arm::model_hash(*model_);
  topology_ = model_topology(*model_).dump();
  if (data_) {
    if (!data_->rows.empty() && data_->rows.front().size() != model_->feature_count())
      throw ColumnCountMismatch(model_->feature_count(), data_->rows.front().size());
    explain_data_ = make_explain_data(*model_, binarize_dataset(model_->binarizer(), data_->rows));
  }
}

HttpResponse Service::get_model(const std::string& if_none_match) const {
  if (!model_) return error_response(503, "NoModel", "no model loaded");
  const std::string etag = "\"" + model_hash_ + "\"";
  if (!if_none_match.empty() && if_none_match == etag) return {304, "", {{"ETag", etag}}};
  return {200, topology_, {{"Content-Type", "application/json"}, {"ETag", etag}}};
}

HttpResponse Service::health() const {
  return json_response(200, json{{"status", "ok"},
                                 {"model_loaded", model_.has_value()},
                                 {"model_hash", model_hash_},
                                 {"dataset_rows", data_ ? data_->size() : 0},
                                 {"db_entries", db_ ? db_->size() : 0}});
}

std::optional<HttpResponse> Service::parse_query(const std::string& body, Query& q) const {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, "MalformedRequest", e.what());
  }
  ParsedFeatures parsed;
  try {
    parsed = parse_features(request, model_->binarizer());
  } catch (const MalformedDocument& e) {
    return error_response(400, "MalformedRequest", e.what());
  }
  if (!parsed.unknown.empty())
    return error_response(400, "UnknownFeature", "unknown features in request",
                          json{{"features", parsed.unknown}, {"missing", parsed.missing}});
  if (!parsed.missing.empty())
    return error_response(400, "MissingFeature", "features absent from request", json{{"features", parsed.missing}});
  if (!parsed.unparsable.empty())
    return error_response(400, "UnparsableValue", "values must be numbers, null or \"missing\"",
                          json{{"features", parsed.unparsable}});
  q.raw = std::move(parsed.values);
  q.bits = model_->binarizer().binarize_row(q.raw);
  q.label = model_->label_binary(q.bits);
  return std::nullopt;
}

HttpResponse Service::predict(const std::string& body) const {
  if (!model_) return error_response(503, "NoModel", "no model loaded");
  Query q;
  if (auto err = parse_query(body, q)) return *err;
  auto out = prediction_to_json(model_->predict(q.raw, config_.n_subscales, config_.n_factors));
  out["model_hash"] = model_hash_;
  return json_response(200, out);
}

json Service::explanation_json(const Explanation& e, const Query& q) const {
  const Binarizer& b = model_->binarizer();
  RuleSet provenance = e.computed;
  if (e.step == ExplainStep::DbHit && db_)
    if (auto entry = db_->find(q.bits)) provenance = entry->rules;
  json settings = json::array();
  for (std::size_t s = 0; s < kRuleSettings; ++s) {
    json item{{"setting", rule_setting_name(s)}};
    item["rule"] = provenance[s] ? rule_to_json(*provenance[s], &b) : json(nullptr);
    settings.push_back(std::move(item));
  }
  return json{{"model_hash", model_hash_},
              {"label", q.label},
              {"rule", rule_to_json(e.rule, &b)},
              {"step", to_string(e.step)},
              {"support_threshold", e.threshold},
              {"verification",
               {{"consistent", e.verification.consistent},
                {"relevant", e.verification.relevant},
                {"support", e.verification.support}}},
              {"settings", settings}};
}

HttpResponse Service::explain(const std::string& body) {
  if (!model_) return error_response(503, "NoModel", "no model loaded");
  if (!data_) return error_response(503, "NoDataset", "no dataset loaded");
  Query q;
  if (auto err = parse_query(body, q)) return *err;
  try {
    const auto e = arm::explain(q.bits, q.label, explain_data_, db_ ? &*db_ : nullptr, config_.explain);
    if (!e.verification.ok()) return error_response(500, "VerificationFailed", "rule failed re-verification");
    return json_response(200, explanation_json(e, q));
  } catch (const OutlierError& e) {
    return error_response(422, "Outlier", OutlierError::kMessage, json{{"detail", e.what()}});
  }
}

HttpResponse Service::cases(const std::string& body) {
  if (!model_) return error_response(503, "NoModel", "no model loaded");
  if (!data_) return error_response(503, "NoDataset", "no dataset loaded");
  Query q;
  if (auto err = parse_query(body, q)) return *err;
  try {
    const auto e = arm::explain(q.bits, q.label, explain_data_, db_ ? &*db_ : nullptr, config_.explain);
    if (!e.verification.ok()) return error_response(500, "VerificationFailed", "rule failed re-verification");
    const auto found = similar_cases(q.bits, e.rule, explain_data_, &*data_, config_.n_cases, q.raw);
    const Bitset satisfying = rule_rows(e.rule.features, explain_data_);
    for (const auto& c : found)
      if (!satisfying.test(c.row)) return error_response(500, "VerificationFailed", "case does not satisfy rule");
    json query_values = json::object();
    for (std::size_t p = 0; p < q.raw.size(); ++p)
      query_values[model_->binarizer().specs()[p].name] = std::isnan(q.raw[p]) ? json("missing") : json(q.raw[p]);
    const Schema shown = schema_of_features();
    return json_response(200, json{{"model_hash", model_hash_},
                                   {"query", {{"values", query_values},
                                              {"probability", model_->probability_binary(q.bits)},
                                              {"model_label", q.label}}},
                                   {"rule", rule_to_json(e.rule, &model_->binarizer())},
                                   {"step", to_string(e.step)},
                                   {"cases", cases_to_json(found, &shown)}});
  } catch (const OutlierError& e) {
    return error_response(422, "Outlier", OutlierError::kMessage, json{{"detail", e.what()}});
  }
}

Schema Service::schema_of_features() const {
  Schema s = schema_;
  s.features = model_->binarizer().specs();
  return s;
}

void Service::register_routes(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    std::string type = "application/json";
    for (const auto& [k, v] : r.headers) {
      if (k == "Content-Type")
        type = v;
      else
        res.set_header(k, v);
    }
    if (r.status != 304) res.set_content(r.body, type);
  };
  auto guarded = [send](auto fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        send(res, error_response(500, "InternalError", e.what()));
      }
    };
  };
  server.Get("/model", guarded([this](const httplib::Request& req) {
               return get_model(req.get_header_value("If-None-Match"));
             }));
  server.Get("/health", guarded([this](const httplib::Request&) { return health(); }));
  server.Post("/predict", guarded([this](const httplib::Request& req) { return predict(req.body); }));
  server.Post("/explain", guarded([this](const httplib::Request& req) { return explain(req.body); }));
  server.Post("/cases", guarded([this](const httplib::Request& req) { return cases(req.body); }));
}

void Service::listen(const std::string& host, int port, const std::string& static_dir) {
  httplib::Server server;
  register_routes(server);
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
    throw Error("cannot serve static files from " + static_dir);
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace arm
