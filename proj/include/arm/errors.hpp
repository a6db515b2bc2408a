#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace arm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ColumnCountMismatch : public Error {
 public:
  ColumnCountMismatch(std::size_t expected, std::size_t actual)
      : Error("expected " + std::to_string(expected) + " columns, got " + std::to_string(actual)),
        expected(expected),
        actual(actual) {}
  std::size_t expected;
  std::size_t actual;
};

class FeatureNotInSubscale : public Error {
 public:
  using Error::Error;
};

class InvalidModel : public Error {
 public:
  using Error::Error;
};

class SchemaVersionMismatch : public Error {
 public:
  using Error::Error;
};

class MalformedDocument : public Error {
 public:
  using Error::Error;
};

// data pipeline
class MissingColumn : public Error {
 public:
  explicit MissingColumn(std::string column)
      : Error("missing column: " + column), column(std::move(column)) {}
  std::string column;
};

class UnparsableValue : public Error {
 public:
  UnparsableValue(std::size_t row, std::string column, const std::string& text)
      : Error("cannot parse '" + text + "' at row " + std::to_string(row) + ", column " + column),
        row(row),
        column(std::move(column)) {}
  std::size_t row;
  std::string column;
};

class UnknownLabelValue : public Error {
 public:
  using Error::Error;
};

class SingleClassDataset : public Error {
 public:
  SingleClassDataset() : Error("dataset contains a single class") {}
};

class DegenerateSpec : public Error {
 public:
  using Error::Error;
};

// explanations
class InfeasibleSparsityCap : public Error {
 public:
  using Error::Error;
};

class BudgetExhaustedNoIncumbent : public Error {
 public:
  using Error::Error;
};

/// No consistent rule of sufficient support exists for the observation.
class OutlierError : public Error {
 public:
  static constexpr const char* kMessage = "the observation is an outlier; there is no rule characterizing it";
  OutlierError() : Error(kMessage) {}

 protected:
  explicit OutlierError(const std::string& message) : Error(message) {}
};

/// A row with the opposite model label matches every candidate conjunct.
class InfeasibleExplanation : public OutlierError {
 public:
  explicit InfeasibleExplanation(std::size_t conflicting_row)
      : OutlierError("row " + std::to_string(conflicting_row) +
                     " has the same binary pattern and the opposite model label"),
        conflicting_row(conflicting_row) {}
  std::size_t conflicting_row;
};

}  // namespace arm
