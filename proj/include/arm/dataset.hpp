#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arm/binarize.hpp"
#include "arm/schema.hpp"

namespace arm {

/// Typed rows in schema feature order. Missing values are NaN.
struct RawDataset {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return rows.size(); }
  RawDataset subset(std::span<const std::size_t> indices) const;
  double positive_rate() const;
};

/// Header is matched by name (order-insensitive); unknown columns are ignored.
/// Feature cells equal to a missing code, or empty, become NaN.
RawDataset read_csv(std::istream& in, const Schema& schema);
RawDataset load_csv(const std::string& path, const Schema& schema);

/// Writes label column first, then features in schema order. NaN is written
/// as an empty field.
void write_csv(std::ostream& out, const RawDataset& data, const Schema& schema);
void save_csv(const std::string& path, const RawDataset& data, const Schema& schema);

bool same_values(const RawDataset& a, const RawDataset& b);

// ---- synthetic data ---------------------------------------------------------

struct MarginalSegment {
  double lo = 0.0;
  double hi = 1.0;
  double weight = 1.0;
};

/// Feature of the synthetic generator. Its logit contribution is
/// `coefficient * g(q)` where q is the marginal CDF at the value and
/// g(q) = 0.5 - q (decreasing), q - 0.5 (increasing) or |q - 0.5| - 0.25 (none).
struct SyntheticFeature {
  std::string name;
  Monotonicity direction = Monotonicity::None;
  std::vector<MarginalSegment> marginal;  ///< piecewise-uniform density
  double coefficient = 1.0;
  double missing_rate = -1.0;  ///< < 0 uses SyntheticSpec::missing_rate
  bool integer = true;

  double cdf(double x) const;
};

struct SyntheticSpec {
  std::size_t n = 1000;
  std::vector<SyntheticFeature> features;
  double missing_rate = 0.02;
  double intercept = 0.0;
  /// Shift the intercept by minus the median logit so classes are balanced.
  bool auto_balance = true;
  double logit_scale = 1.0;
  /// Label = 1[logit > 0] instead of a Bernoulli draw.
  bool deterministic = false;
  std::uint64_t seed = 1;
};

/// FICO-like marginals and monotone directions for the schema's 23 features.
SyntheticSpec fico_like_spec(std::size_t n, std::uint64_t seed);

/// Deterministic given the seed. Throws DegenerateSpec if every retry yields one class.
RawDataset generate_synthetic(const SyntheticSpec& spec);

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// ---- splits -----------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Random train/test partitions of [0, labels.size()). Throws SingleClassDataset.
std::vector<Split> make_splits(std::span<const std::uint8_t> labels, double test_frac = 0.2,
                               std::size_t n_splits = 5, std::uint64_t seed = 7,
                               bool stratified = false);

}  // namespace arm
