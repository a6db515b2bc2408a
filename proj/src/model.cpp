#include "arm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "arm/errors.hpp"

namespace arm {

double sigmoid(double logit) {
  const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
  return 1.0 / (1.0 + std::exp(-z));
}

double probability_from_breakdown(double bias, std::span<const SubscaleBreakdown> breakdown) {
  double logit = bias;
  for (const auto& b : breakdown) logit += b.weighted;
  return sigmoid(logit);
}

ArmModel::ArmModel(Binarizer binarizer, std::vector<Subscale> subscales,
                   std::vector<double> weights, double bias)
    : binarizer_(std::move(binarizer)),
      subscales_(std::move(subscales)),
      weights_(std::move(weights)),
      bias_(bias) {
  if (weights_.size() != subscales_.size())
    throw InvalidModel("expected one second-layer weight per subscale");
  if (!std::isfinite(bias_)) throw InvalidModel("non-finite second-layer bias");
  for (double w : weights_)
    if (!std::isfinite(w) || w < 0.0) throw InvalidModel("second-layer weights must be >= 0");

  const std::size_t P = binarizer_.feature_count();
  constexpr auto kUnowned = std::numeric_limits<std::size_t>::max();
  owner_.assign(P, kUnowned);
  columns_.resize(subscales_.size());
  for (std::size_t k = 0; k < subscales_.size(); ++k) {
    const auto& s = subscales_[k];
    for (std::size_t p : s.features) {
      if (p >= P) throw InvalidModel("subscale " + s.name + " references unknown feature");
      if (owner_[p] != kUnowned)
        throw InvalidModel("feature " + binarizer_.specs()[p].name +
                           " belongs to more than one subscale");
      owner_[p] = k;
      const std::size_t off = binarizer_.feature_offset(p);
      for (std::size_t l = 0; l < binarizer_.specs()[p].indicator_count(); ++l)
        columns_[k].push_back(off + l);
    }
    if (s.coefficients.size() != columns_[k].size())
      throw InvalidModel("subscale " + s.name + ": expected " +
                         std::to_string(columns_[k].size()) + " coefficients");
    if (!std::isfinite(s.bias)) throw InvalidModel("subscale " + s.name + ": non-finite bias");
    for (std::size_t i = 0; i < columns_[k].size(); ++i) {
      const double c = s.coefficients[i];
      if (!std::isfinite(c)) throw InvalidModel("subscale " + s.name + ": non-finite coefficient");
      if (binarizer_.is_constrained(columns_[k][i]) && c < 0.0)
        throw InvalidModel("subscale " + s.name + ": negative coefficient on monotone indicator " +
                           binarizer_.column(columns_[k][i]).display_name);
    }
  }
  for (std::size_t p = 0; p < P; ++p)
    if (owner_[p] == kUnowned)
      throw InvalidModel("feature " + binarizer_.specs()[p].name + " is in no subscale");
}

SubscaleScore ArmModel::subscale_risk(std::size_t k, std::span<const std::uint8_t> row) const {
  if (row.size() < binarizer_.original_count())
    throw ColumnCountMismatch(binarizer_.original_count(), row.size());
  const auto& s = subscales_[k];
  const auto& cols = columns_[k];
  double points = s.bias;
  for (std::size_t i = 0; i < cols.size(); ++i)
    points += s.coefficients[i] * static_cast<double>(row[cols[i]]);
  return {points, sigmoid(points)};
}

double ArmModel::probability_binary(std::span<const std::uint8_t> row) const {
  double logit = bias_;
  for (std::size_t k = 0; k < subscales_.size(); ++k)
    logit += weights_[k] * subscale_risk(k, row).risk;
  return sigmoid(logit);
}

Prediction ArmModel::predict(std::span<const double> raw, std::size_t n_subscales,
                             std::size_t n_factors) const {
  const auto row = binarizer_.binarize_row(raw);
  return predict_binary(row, n_subscales, n_factors);
}

Prediction ArmModel::predict_binary(std::span<const std::uint8_t> row, std::size_t n_subscales,
                                    std::size_t n_factors) const {
  Prediction out;
  out.subscales.reserve(subscales_.size());
  double logit = bias_;
  for (std::size_t k = 0; k < subscales_.size(); ++k) {
    const auto score = subscale_risk(k, row);
    SubscaleBreakdown b{subscales_[k].name, score.points, score.risk, weights_[k],
                        weights_[k] * score.risk};
    logit += b.weighted;
    out.subscales.push_back(std::move(b));
  }
  out.logit = logit;
  out.probability = sigmoid(logit);
  out.important_factors = variable_importance(row, n_subscales, n_factors);
  return out;
}

std::vector<ImportantSubscale> ArmModel::variable_importance(std::span<const std::uint8_t> row,
                                                             std::size_t n_subscales,
                                                             std::size_t n_factors) const {
  const std::size_t K = subscales_.size();
  std::vector<double> weighted(K);
  for (std::size_t k = 0; k < K; ++k) weighted[k] = weights_[k] * subscale_risk(k, row).risk;

  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weighted[a] > weighted[b]; });

  std::vector<ImportantSubscale> out;
  for (std::size_t r = 0; r < std::min(n_subscales, K); ++r) {
    const std::size_t k = order[r];
    ImportantSubscale entry{k, subscales_[k].name, weighted[k], {}};
    const auto& cols = columns_[k];
    std::vector<Factor> factors;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const double c = subscales_[k].coefficients[i] * static_cast<double>(row[cols[i]]);
      if (c > 0.0) factors.push_back({cols[i], c, binarizer_.column(cols[i]).display_name});
    }
    std::stable_sort(factors.begin(), factors.end(),
                     [](const Factor& a, const Factor& b) { return a.contribution > b.contribution; });
    if (factors.size() > n_factors) factors.resize(n_factors);
    entry.factors = std::move(factors);
    out.push_back(std::move(entry));
  }
  return out;
}

double ArmModel::feature_points(std::size_t p, double raw) const {
  const auto& spec = binarizer_.specs().at(p);
  const std::size_t k = owner_[p];
  const std::size_t off = binarizer_.feature_offset(p);
  const auto& cols = columns_[k];
  const auto first = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), off) - cols.begin());
  const auto bits = binarize_value(spec, raw);
  double s = 0.0;
  for (std::size_t l = 0; l < bits.size(); ++l)
    s += subscales_[k].coefficients[first + l] * static_cast<double>(bits[l]);
  return s;
}

ScoringTable ArmModel::scoring_table(std::size_t k, std::size_t p) const {
  if (k >= subscales_.size()) throw FeatureNotInSubscale("no such subscale");
  if (p >= owner_.size() || owner_[p] != k)
    throw FeatureNotInSubscale("feature " + std::to_string(p) + " is not in subscale " +
                               subscales_[k].name);
  const auto& spec = binarizer_.specs()[p];
  const auto& cols = columns_[k];
  const std::size_t off = binarizer_.feature_offset(p);
  const auto first = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), off) - cols.begin());
  const auto& beta = subscales_[k].coefficients;
  const std::size_t m = spec.thresholds.size();
  const bool above = spec.monotonicity == Monotonicity::Increasing;
  constexpr double inf = std::numeric_limits<double>::infinity();

  ScoringTable table;
  table.subscale = subscales_[k].name;
  table.spec = spec;
  // Interval j lies between thresholds j-1 and j. Its points are summed in
  // the same column order as feature_points() so the two agree exactly.
  for (std::size_t j = 0; j <= m; ++j) {
    ScoringRow row;
    row.lower = j == 0 ? -inf : spec.thresholds[j - 1];
    row.upper = j == m ? inf : spec.thresholds[j];
    row.lower_closed = !above && j > 0;
    row.upper_closed = above && j < m;
    double s = 0.0;
    for (std::size_t l = 0; l < m; ++l) {
      const bool active = above ? l < j : l >= j;
      s += beta[first + l] * static_cast<double>(active ? 1 : 0);
    }
    if (spec.include_not_missing_indicator) s += beta[first + m] * 1.0;
    row.points = s;

    const std::string x = spec.name;
    if (m == 0) {
      row.label = x + " not missing";
    } else if (j == 0) {
      row.label = x + (above ? " <= " : " < ") + format_number(row.upper);
    } else if (j == m) {
      row.label = x + (above ? " > " : " >= ") + format_number(row.lower);
    } else {
      row.label = format_number(row.lower) + (above ? " < " : " <= ") + x +
                  (above ? " <= " : " < ") + format_number(row.upper);
    }
    table.rows.push_back(std::move(row));
  }
  double missing = 0.0;
  for (std::size_t l = 0; l < spec.indicator_count(); ++l) missing += beta[first + l] * 0.0;
  table.missing_points = missing;
  return table;
}

std::size_t ScoringTable::interval_of(double raw) const {
  const auto& t = spec.thresholds;
  if (spec.monotonicity == Monotonicity::Increasing)
    return static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), raw) - t.begin());
  return static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), raw) - t.begin());
}

double ScoringTable::lookup(double raw) const {
  if (spec.is_missing(raw)) return missing_points;
  return rows[interval_of(raw)].points;
}

std::string ScoringTable::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "interval,points\n";
  for (const auto& r : rows) os << '"' << r.label << "\"," << r.points << '\n';
  os << "Missing," << missing_points << '\n';
  return os.str();
}

std::string ScoringTable::to_text() const {
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << subscale << " / " << spec.name << '\n';
  os.setf(std::ios::fixed);
  os.precision(3);
  for (const auto& r : rows)
    os << "  " << r.label << std::string(width - r.label.size() + 2, ' ') << r.points << '\n';
  os << "  Missing" << std::string(width - 7 + 2, ' ') << missing_points << '\n';
  return os.str();
}

}  // namespace arm
