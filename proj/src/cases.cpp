#include "arm/cases.hpp"

#include <algorithm>
#include <cmath>

#include "arm/errors.hpp"

namespace arm {

using nlohmann::json;

namespace {

bool same_raw(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const bool na = std::isnan(a[j]), nb = std::isnan(b[j]);
    if (na != nb || (!na && a[j] != b[j])) return false;
  }
  return true;
}

}  // namespace

std::vector<SimilarCase> similar_cases(std::span<const std::uint8_t> query, const Rule& rule,
                                       const ExplainData& data, const RawDataset* raw, std::size_t k,
                                       std::span<const double> query_raw) {
  if (query.size() != data.cols()) throw ColumnCountMismatch(data.cols(), query.size());
  if (raw && raw->size() != data.rows()) throw ColumnCountMismatch(data.rows(), raw->size());
  const std::size_t originals = data.X.originals();

  std::size_t self = data.rows();
  if (raw && !query_raw.empty())
    for (std::size_t i = 0; i < raw->size() && self == data.rows(); ++i)
      if (same_raw(raw->rows[i], query_raw)) self = i;

  std::vector<SimilarCase> cases;
  rule_rows(rule.features, data).for_each([&](std::size_t i) {
    if (i == self) return;
    SimilarCase c;
    c.row = i;
    const auto r = data.X.row(i);
    for (std::size_t j = 0; j < originals; ++j) c.shared_feature_count += r[j] == query[j];
    c.model_label = data.labels[i];
    if (!data.probabilities.empty()) c.probability = data.probabilities[i];
    cases.push_back(std::move(c));
  });
  std::stable_sort(cases.begin(), cases.end(), [](const SimilarCase& a, const SimilarCase& b) {
    return a.shared_feature_count > b.shared_feature_count;
  });
  if (cases.size() > k) cases.resize(k);
  if (raw)
    for (auto& c : cases) c.values = raw->rows[c.row];
  return cases;
}

json cases_to_json(const std::vector<SimilarCase>& cases, const Schema* schema) {
  json out = json::array();
  for (const auto& c : cases) {
    json values;
    if (schema && c.values.size() == schema->features.size()) {
      values = json::object();
      for (std::size_t j = 0; j < c.values.size(); ++j)
        values[schema->features[j].name] = std::isnan(c.values[j]) ? json("missing") : json(c.values[j]);
    } else {
      values = json::array();
      for (double v : c.values) values.push_back(std::isnan(v) ? json(nullptr) : json(v));
    }
    out.push_back(json{{"row", c.row},
                       {"values", values},
                       {"model_label", c.model_label},
                       {"probability", c.probability},
                       {"shared_feature_count", c.shared_feature_count}});
  }
  return out;
}

}  // namespace arm
