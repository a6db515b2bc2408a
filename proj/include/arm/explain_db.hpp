#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arm/model.hpp"
#include "arm/setcover.hpp"

namespace arm {

/// Max-sparsity, then max-support with the sparsity cap relaxed by 0, 1 and 2.
inline constexpr std::size_t kRuleSettings = 4;
std::string_view rule_setting_name(std::size_t setting);

using RuleSet = std::array<std::optional<Rule>, kRuleSettings>;

/// Fills every setting; each max-support solve is warm-started from the
/// previous one so supports never decrease across relaxations.
RuleSet compute_rule_set(const ExplainContext& ctx, const SolverBudget& budget);

struct DbEntry {
  std::vector<std::uint8_t> pattern;
  std::uint8_t label = 0;
  RuleSet rules;
  std::string error;  ///< non-empty when no rule could be computed
};

/// Cached rules keyed by binarized pattern. Safe for concurrent readers with
/// exclusive writers.
class ExplanationDb {
 public:
  static constexpr int kVersion = 1;

  ExplanationDb();
  ExplanationDb(std::string model_hash, std::uint64_t dataset_hash);
  ExplanationDb(ExplanationDb&& other) noexcept;
  ExplanationDb& operator=(ExplanationDb&& other) noexcept;

  std::string model_hash() const;
  std::uint64_t dataset_hash() const;
  void set_keys(std::string model_hash, std::uint64_t dataset_hash);
  bool matches(const std::string& model_hash, std::uint64_t dataset_hash) const;

  std::size_t size() const;
  std::optional<DbEntry> find(std::span<const std::uint8_t> pattern) const;
  void put(DbEntry entry);
  void erase(std::span<const std::uint8_t> pattern);
  void clear();
  /// Snapshot in key order.
  std::vector<DbEntry> entries() const;

  /// Sparsest cached rule with support strictly above `threshold`; ties go to
  /// the larger support.
  std::optional<Rule> lookup(std::span<const std::uint8_t> pattern, std::size_t threshold) const;

  nlohmann::json to_json() const;
  static ExplanationDb from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ExplanationDb load(const std::string& path);

 private:
  static std::string key_of(std::span<const std::uint8_t> pattern);

  std::unique_ptr<std::shared_mutex> mutex_;
  std::string model_hash_;
  std::uint64_t dataset_hash_ = 0;
  std::map<std::string, DbEntry> entries_;
};

/// Per-column Bernoulli draws from the empirical marginals of the original
/// columns, repaired so each feature's bits describe a realizable value.
std::vector<std::vector<std::uint8_t>> sample_random_patterns(const Binarizer& binarizer,
                                                              const BinarizedMatrix& X,
                                                              std::size_t n, std::uint64_t seed);

struct DbBuildSettings {
  bool include_rows = true;
  /// Restrict to these dataset rows; empty means all rows.
  std::vector<std::size_t> rows;
  std::size_t n_random = 0;
  std::uint64_t seed = 1;
  SolverBudget budget;
  std::size_t threads = 1;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct DbBuildReport {
  std::size_t targets = 0;
  std::size_t solved = 0;
  std::size_t reused = 0;
  std::size_t stale = 0;  ///< cached entries that failed re-verification
  std::size_t failed = 0;
  std::vector<std::string> failures;

  nlohmann::json to_json() const;
};

/// Adds the four rules for every target pattern. Entries already present for
/// the same model and dataset are re-verified and kept; anything else is
/// recomputed.
DbBuildReport build_explanation_db(ExplanationDb& db, const ArmModel& model, const ExplainData& data,
                                   const std::string& model_hash, const DbBuildSettings& settings = {});

enum class ExplainStep { DbHit, MaxSparsity, MaxSupport0, MaxSupport1, MaxSupport2 };
std::string_view to_string(ExplainStep step);

struct ExplainSettings {
  std::vector<std::size_t> support_thresholds{10, 5};
  SolverBudget budget;
  /// Store rules computed for unseen patterns.
  bool write_through = false;
};

struct Explanation {
  Rule rule;
  ExplainStep step = ExplainStep::DbHit;
  std::size_t threshold = 0;
  Verification verification;
  RuleSet computed;  ///< rules solved for this request
};

/// Cascade: db lookup, max-sparsity, then max-support at +0, +1, +2, first
/// with support above 10 and then above 5. Throws OutlierError otherwise;
/// InfeasibleExplanation is a kind of OutlierError.
Explanation explain(std::span<const std::uint8_t> query, std::uint8_t label, const ExplainData& data,
                    ExplanationDb* db, const ExplainSettings& settings = {});

}  // namespace arm
