#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arm/binarize.hpp"
#include "arm/bitset.hpp"
#include "arm/model.hpp"

namespace arm {

/// Conjunction of binary columns of [X, X^c] implying a model label.
struct Rule {
  std::vector<std::size_t> features;  ///< sorted column indices
  std::uint8_t label = 0;
  std::size_t support = 0;
  /// True when the solver proved optimality within its budget.
  bool exact = true;
  /// Proven bound on the objective (sparsity lower bound or support upper bound).
  double bound = 0.0;

  std::size_t sparsity() const { return features.size(); }
};

/// Limits for one solve. When passed to compute_rule_set or explain the time
/// limit is shared by every solve of that call.
struct SolverBudget {
  std::chrono::milliseconds time_limit{6000};
  std::size_t node_limit = 50'000'000;
  /// Stop once incumbent minus bound is within this many units.
  double gap = 0.0;
};

/// Binarized dataset with model labels and per-column row bitsets.
struct ExplainData {
  BinarizedMatrix X;
  std::vector<std::uint8_t> labels;  ///< model labels
  std::vector<double> probabilities;  ///< model probabilities, may be empty
  std::vector<Bitset> columns;        ///< columns[j].test(i) == X(i, j)
  Bitset positive;                    ///< rows with label 1
  std::uint64_t hash = 0;             ///< FNV-1a of the matrix and labels

  ExplainData() = default;
  ExplainData(BinarizedMatrix X, std::vector<std::uint8_t> labels,
              std::vector<double> probabilities = {});

  std::size_t rows() const { return X.rows(); }
  std::size_t cols() const { return X.cols(); }
};

/// Labels every row with the model (threshold 0.5).
ExplainData make_explain_data(const ArmModel& model, BinarizedMatrix X);

/// Candidate columns and cover sets for one observation.
struct ExplainContext {
  std::vector<std::uint8_t> query;    ///< binarized observation
  std::uint8_t label = 0;
  std::vector<std::size_t> candidates;  ///< P_e, ascending
  Bitset opposite;                      ///< rows whose model label differs
  /// cover[c]: opposite rows with x_{i,p} = 0 for p = candidates[c].
  std::vector<Bitset> cover;
  /// |A_p| over all rows for each candidate.
  std::vector<std::size_t> cover_all;
  const ExplainData* data = nullptr;
};

/// Throws InfeasibleExplanation when an opposite row matches every candidate.
ExplainContext build_context(std::span<const std::uint8_t> query, std::uint8_t label,
                             const ExplainData& data);

/// Rows satisfying the conjunction.
Bitset rule_rows(std::span<const std::size_t> features, const ExplainData& data);

/// Greedy cover over the full opposite set.
Rule greedy_cover(const ExplainContext& ctx);

struct SparsityOptions {
  SolverBudget budget;
  bool drop_dominated = true;
};

/// Minimum-cardinality rule. The support is the exact count for the returned rule.
Rule solve_max_sparsity(const ExplainContext& ctx, const SparsityOptions& options = {});

/// Largest-support rule with at most `max_sparsity` conjuncts. `warm_start`, if
/// given, must be feasible and is used as the initial incumbent.
Rule solve_max_support(const ExplainContext& ctx, std::size_t max_sparsity,
                       const SolverBudget& budget = {}, const Rule* warm_start = nullptr);

struct Verification {
  bool consistent = false;
  bool relevant = true;  ///< only checked when a query is supplied
  std::size_t support = 0;
  std::vector<std::size_t> counterexamples;

  bool ok() const { return consistent && relevant; }
};

Verification verify_rule(const Rule& rule, const ExplainData& data,
                         std::span<const std::uint8_t> query = {});

/// "A AND B => high risk, supported by N prior cases"
std::string render_rule(const Rule& rule, const Binarizer& binarizer);

nlohmann::json rule_to_json(const Rule& rule, const Binarizer* binarizer = nullptr);
Rule rule_from_json(const nlohmann::json& j);

}  // namespace arm
