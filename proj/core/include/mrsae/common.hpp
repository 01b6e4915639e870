#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrsae {

/// Row-major dense matrix; one row per sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Column-major dense matrix; used where columns are the natural unit (decoder atoms).
using ColMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input, violated precondition, or invalid configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Parse failure with a location inside the offending file.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : ValidationError(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
          row_(row), column_(column) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

/// A required upstream file does not exist.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or other numerical breakdown.
class NumericalError : public Error {
public:
    using Error::Error;
};

const char* library_version() noexcept;

} // namespace mrsae
