#include "arm/binarize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "arm/errors.hpp"

namespace arm {

std::string_view to_string(Monotonicity m) {
  switch (m) {
    case Monotonicity::Increasing:
      return "increasing";
    case Monotonicity::Decreasing:
      return "decreasing";
    case Monotonicity::None:
      return "none";
  }
  return "none";
}

Monotonicity monotonicity_from_string(std::string_view s) {
  if (s == "increasing") return Monotonicity::Increasing;
  if (s == "decreasing") return Monotonicity::Decreasing;
  if (s == "none") return Monotonicity::None;
  throw MalformedDocument("unknown monotonicity '" + std::string(s) + "'");
}

bool FeatureSpec::is_missing(double raw) const {
  if (std::isnan(raw)) return true;
  return std::find(missing_codes.begin(), missing_codes.end(), raw) != missing_codes.end();
}

void FeatureSpec::validate() const {
  for (std::size_t l = 0; l < thresholds.size(); ++l) {
    if (!std::isfinite(thresholds[l]))
      throw InvalidModel("feature " + name + ": non-finite threshold");
    if (l > 0 && !(thresholds[l - 1] < thresholds[l]))
      throw InvalidModel("feature " + name + ": thresholds must be strictly increasing");
  }
}

std::vector<std::uint8_t> binarize_value(const FeatureSpec& spec, double raw) {
  std::vector<std::uint8_t> bits(spec.indicator_count(), 0);
  if (spec.is_missing(raw)) return bits;
  const bool above = spec.monotonicity == Monotonicity::Increasing;
  for (std::size_t l = 0; l < spec.thresholds.size(); ++l)
    bits[l] = above ? raw > spec.thresholds[l] : raw < spec.thresholds[l];
  if (spec.include_not_missing_indicator) bits.back() = 1;
  return bits;
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string display_name(const FeatureSpec& spec, BinaryKind kind, double t, bool complement) {
  const std::string& n = spec.name;
  switch (kind) {
    case BinaryKind::ThresholdBelow:
      return complement ? n + " >= " + format_number(t) + " or missing"
                        : n + " < " + format_number(t);
    case BinaryKind::ThresholdAbove:
      return complement ? n + " <= " + format_number(t) + " or missing"
                        : n + " > " + format_number(t);
    case BinaryKind::NotMissing:
      return complement ? n + " is missing" : n + " is not missing";
  }
  return n;
}

}  // namespace

Binarizer::Binarizer(std::vector<FeatureSpec> specs) : specs_(std::move(specs)) {
  offsets_.reserve(specs_.size());
  std::vector<BinaryFeature> originals;
  for (std::size_t p = 0; p < specs_.size(); ++p) {
    const auto& s = specs_[p];
    s.validate();
    offsets_.push_back(originals.size());
    const auto kind = s.monotonicity == Monotonicity::Increasing ? BinaryKind::ThresholdAbove
                                                                 : BinaryKind::ThresholdBelow;
    for (double t : s.thresholds) {
      BinaryFeature f{p, kind, t, false, originals.size(), display_name(s, kind, t, false)};
      originals.push_back(std::move(f));
    }
    if (s.include_not_missing_indicator) {
      BinaryFeature f{p, BinaryKind::NotMissing, 0.0, false, originals.size(),
                      display_name(s, BinaryKind::NotMissing, 0.0, false)};
      originals.push_back(std::move(f));
    }
  }
  original_count_ = originals.size();
  columns_ = originals;
  for (const auto& o : originals) {
    BinaryFeature c = o;
    c.complement = true;
    c.display_name = display_name(specs_[o.parent], o.kind, o.threshold, true);
    columns_.push_back(std::move(c));
  }
}

std::optional<std::size_t> Binarizer::feature_index(std::string_view name) const {
  for (std::size_t p = 0; p < specs_.size(); ++p)
    if (specs_[p].name == name) return p;
  return std::nullopt;
}

bool Binarizer::is_constrained(std::size_t j) const {
  const auto& c = columns_[j];
  return !c.complement && c.kind != BinaryKind::NotMissing &&
         specs_[c.parent].monotonicity != Monotonicity::None;
}

void Binarizer::binarize_row(std::span<const double> raw, std::span<std::uint8_t> out) const {
  if (raw.size() != specs_.size()) throw ColumnCountMismatch(specs_.size(), raw.size());
  if (out.size() != column_count()) throw ColumnCountMismatch(column_count(), out.size());
  for (std::size_t p = 0; p < specs_.size(); ++p) {
    const auto bits = binarize_value(specs_[p], raw[p]);
    std::copy(bits.begin(), bits.end(), out.begin() + static_cast<std::ptrdiff_t>(offsets_[p]));
  }
  for (std::size_t j = 0; j < original_count_; ++j) out[original_count_ + j] = 1 - out[j];
}

std::vector<std::uint8_t> Binarizer::binarize_row(std::span<const double> raw) const {
  std::vector<std::uint8_t> out(column_count());
  binarize_row(raw, out);
  return out;
}

std::vector<Bitset> BinarizedMatrix::column_bitsets() const {
  std::vector<Bitset> cols_bits(cols(), Bitset(rows_));
  for (std::size_t i = 0; i < rows_; ++i) {
    auto r = row(i);
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[j]) cols_bits[j].set(i);
  }
  return cols_bits;
}

BinarizedMatrix BinarizedMatrix::from_originals(std::span<const std::vector<std::uint8_t>> rows,
                                                std::size_t originals) {
  BinarizedMatrix m(rows.size(), originals);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != originals) throw ColumnCountMismatch(originals, rows[i].size());
    auto out = m.mutable_row(i);
    for (std::size_t j = 0; j < originals; ++j) {
      out[j] = rows[i][j] ? 1 : 0;
      out[originals + j] = 1 - out[j];
    }
  }
  return m;
}

BinarizedMatrix binarize_dataset(const Binarizer& binarizer,
                                 std::span<const std::vector<double>> rows) {
  BinarizedMatrix m(rows.size(), binarizer.original_count());
  for (std::size_t i = 0; i < rows.size(); ++i) binarizer.binarize_row(rows[i], m.mutable_row(i));
  return m;
}

}  // namespace arm
