#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arm/bitset.hpp"

namespace arm {

enum class Monotonicity { Increasing, Decreasing, None };

std::string_view to_string(Monotonicity m);
Monotonicity monotonicity_from_string(std::string_view s);

/// Per-feature binarization metadata.
///
/// Decreasing (and None) features get indicators 1[x < t]; Increasing
/// features get 1[x > t]. Missing values (NaN or one of `missing_codes`)
/// switch every threshold indicator off and clear the not-missing bit.
struct FeatureSpec {
  std::string name;
  Monotonicity monotonicity = Monotonicity::None;
  std::vector<double> thresholds;
  std::vector<double> missing_codes;
  bool include_not_missing_indicator = true;

  bool is_missing(double raw) const;
  /// Number of binary indicators (thresholds plus the optional not-missing bit).
  std::size_t indicator_count() const {
    return thresholds.size() + (include_not_missing_indicator ? 1 : 0);
  }
  /// Throws InvalidModel when thresholds are not finite and strictly increasing.
  void validate() const;
};

enum class BinaryKind { ThresholdBelow, ThresholdAbove, NotMissing };

struct BinaryFeature {
  std::size_t parent = 0;  ///< raw feature index
  BinaryKind kind = BinaryKind::NotMissing;
  double threshold = 0.0;
  bool complement = false;
  std::size_t original = 0;  ///< column this one complements (self for originals)
  std::string display_name;
};

/// Bits for a single raw value, one per indicator of `spec` (thresholds in
/// order, then not-missing). Complements are not included.
std::vector<std::uint8_t> binarize_value(const FeatureSpec& spec, double raw);

/// Maps raw rows onto the 2P~ binary design [X, X^c].
class Binarizer {
 public:
  Binarizer() = default;
  explicit Binarizer(std::vector<FeatureSpec> specs);

  const std::vector<FeatureSpec>& specs() const { return specs_; }
  std::size_t feature_count() const { return specs_.size(); }
  std::size_t original_count() const { return original_count_; }
  std::size_t column_count() const { return 2 * original_count_; }
  const std::vector<BinaryFeature>& columns() const { return columns_; }
  const BinaryFeature& column(std::size_t j) const { return columns_[j]; }

  /// First original column of feature p; its indicators occupy
  /// [feature_offset(p), feature_offset(p) + specs()[p].indicator_count()).
  std::size_t feature_offset(std::size_t p) const { return offsets_[p]; }
  std::optional<std::size_t> feature_index(std::string_view name) const;

  /// True for threshold indicators of monotone features (coefficient must be >= 0).
  bool is_constrained(std::size_t original_column) const;

  /// Writes all 2P~ bits of `raw` into `out`. Throws ColumnCountMismatch.
  void binarize_row(std::span<const double> raw, std::span<std::uint8_t> out) const;
  std::vector<std::uint8_t> binarize_row(std::span<const double> raw) const;

 private:
  std::vector<FeatureSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::vector<BinaryFeature> columns_;
  std::size_t original_count_ = 0;
};

/// Dense N x 2P~ 0/1 matrix; originals in [0, P~), complements in [P~, 2P~).
class BinarizedMatrix {
 public:
  BinarizedMatrix() = default;
  BinarizedMatrix(std::size_t rows, std::size_t originals)
      : rows_(rows), originals_(originals), data_(rows * originals * 2, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return 2 * originals_; }
  std::size_t originals() const { return originals_; }

  std::uint8_t operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  std::span<const std::uint8_t> row(std::size_t i) const {
    return {data_.data() + i * cols(), cols()};
  }
  std::span<std::uint8_t> mutable_row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }

  /// Column j as a bitset over rows.
  std::vector<Bitset> column_bitsets() const;

  /// Builds a matrix from original-column rows, appending complements.
  static BinarizedMatrix from_originals(std::span<const std::vector<std::uint8_t>> rows,
                                        std::size_t originals);

 private:
  std::size_t rows_ = 0;
  std::size_t originals_ = 0;
  std::vector<std::uint8_t> data_;
};

BinarizedMatrix binarize_dataset(const Binarizer& binarizer,
                                 std::span<const std::vector<double>> rows);

/// Compact decimal rendering used in display names and tables.
std::string format_number(double v);

}  // namespace arm
