#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arm/binarize.hpp"

namespace arm {

/// Logistic function with the logit clamped to [-36, 36], so the result is
/// always strictly inside (0, 1).
double sigmoid(double logit);
inline constexpr double kLogitClamp = 36.0;

/// One first-layer node: a logistic mini-model over a group of raw features.
struct Subscale {
  std::string name;
  std::vector<std::size_t> features;  ///< raw feature indices, in declaration order
  /// One coefficient per original indicator of `features`, feature by feature
  /// in the binarizer's column order.
  std::vector<double> coefficients;
  double bias = 0.0;
};

struct SubscaleScore {
  double points = 0.0;  ///< bias + sum of active coefficients
  double risk = 0.5;    ///< sigmoid(points)
};

/// Interval form of one feature's step-function sum.
struct ScoringRow {
  double lower = 0.0;  ///< -inf for the first interval
  double upper = 0.0;  ///< +inf for the last interval
  bool lower_closed = false;
  bool upper_closed = false;
  double points = 0.0;
  std::string label;
};

struct ScoringTable {
  std::string subscale;
  FeatureSpec spec;
  std::vector<ScoringRow> rows;
  double missing_points = 0.0;

  /// Index into `rows` for a non-missing raw value.
  std::size_t interval_of(double raw) const;
  double lookup(double raw) const;
  /// "interval,points" lines, Missing last.
  std::string to_csv() const;
  std::string to_text() const;
};

struct SubscaleBreakdown {
  std::string name;
  double points = 0.0;
  double risk = 0.5;
  double weight = 0.0;
  double weighted = 0.0;  ///< weight * risk
};

struct Factor {
  std::size_t column = 0;  ///< original binary column
  double contribution = 0.0;
  std::string description;
};

struct ImportantSubscale {
  std::size_t subscale = 0;
  std::string name;
  double weighted = 0.0;
  std::vector<Factor> factors;
};

struct Prediction {
  double probability = 0.5;
  double logit = 0.0;
  std::vector<SubscaleBreakdown> subscales;
  std::vector<ImportantSubscale> important_factors;
};

/// Two-layer additive risk model. Immutable after construction.
///
/// logit = bias + sum_k weights[k] * sigmoid(subscale_k.bias + sum beta * b)
/// probability = sigmoid(logit)
///
/// Construction enforces: disjoint subscale feature sets covering every raw
/// feature, non-negative threshold coefficients on monotone features, and
/// non-negative second-layer weights.
class ArmModel {
 public:
  ArmModel() = default;
  ArmModel(Binarizer binarizer, std::vector<Subscale> subscales, std::vector<double> weights,
           double bias);

  const Binarizer& binarizer() const { return binarizer_; }
  const std::vector<Subscale>& subscales() const { return subscales_; }
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  std::size_t subscale_count() const { return subscales_.size(); }
  std::size_t feature_count() const { return binarizer_.feature_count(); }

  /// Original binary columns of subscale k, aligned with its coefficients.
  const std::vector<std::size_t>& subscale_columns(std::size_t k) const { return columns_[k]; }
  /// Subscale owning raw feature p.
  std::size_t subscale_of_feature(std::size_t p) const { return owner_[p]; }

  /// `row` holds at least the P~ original bits (a full 2P~ row is fine).
  SubscaleScore subscale_risk(std::size_t k, std::span<const std::uint8_t> row) const;

  Prediction predict(std::span<const double> raw, std::size_t n_subscales = 2,
                     std::size_t n_factors = 2) const;
  Prediction predict_binary(std::span<const std::uint8_t> row, std::size_t n_subscales = 2,
                            std::size_t n_factors = 2) const;
  double probability_binary(std::span<const std::uint8_t> row) const;
  /// Model label: 1 iff probability >= 0.5.
  std::uint8_t label_binary(std::span<const std::uint8_t> row) const {
    return probability_binary(row) >= 0.5 ? 1 : 0;
  }

  /// Top subscales by weight * risk, and within each the active indicators
  /// with the largest positive coefficient. Ties keep declaration order.
  std::vector<ImportantSubscale> variable_importance(std::span<const std::uint8_t> row,
                                                     std::size_t n_subscales = 2,
                                                     std::size_t n_factors = 2) const;

  /// Throws FeatureNotInSubscale when feature p does not belong to subscale k.
  ScoringTable scoring_table(std::size_t k, std::size_t p) const;

  /// Direct step-function sum of feature p's coefficients at `raw`.
  double feature_points(std::size_t p, double raw) const;

 private:
  Binarizer binarizer_;
  std::vector<Subscale> subscales_;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::vector<std::vector<std::size_t>> columns_;
  std::vector<std::size_t> owner_;
};

/// Recomputes sigmoid(bias + sum weighted) from a breakdown, in breakdown order.
double probability_from_breakdown(double bias, std::span<const SubscaleBreakdown> breakdown);

}  // namespace arm
