#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "arm/dataset.hpp"
#include "arm/setcover.hpp"

namespace arm {

struct SimilarCase {
  std::size_t row = 0;
  std::vector<double> values;  ///< raw row, empty if no raw data was given
  std::uint8_t model_label = 0;
  double probability = 0.0;
  /// Original (non-complement) binary columns equal to the query's.
  std::size_t shared_feature_count = 0;
};

/// Rows satisfying `rule`, ranked by shared original binary columns
/// (descending, ties by row index), truncated to k. When `query_raw` is given,
/// the first row with exactly the same raw values is left out.
std::vector<SimilarCase> similar_cases(std::span<const std::uint8_t> query, const Rule& rule,
                                       const ExplainData& data, const RawDataset* raw = nullptr,
                                       std::size_t k = 5, std::span<const double> query_raw = {});

nlohmann::json cases_to_json(const std::vector<SimilarCase>& cases, const Schema* schema = nullptr);

}  // namespace arm
