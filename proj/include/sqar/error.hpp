#pragma once

#include <stdexcept>
#include <string>

namespace sqar {

// Base of every error raised by the library. Data problems and numerical
// failures are distinguished by type so the CLI can map them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class InvalidLambda : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class InvalidBudget : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class TooLarge : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class SingularSystem : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class RankDeficient : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class MaxIterations : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : DataError(what + " (row " + std::to_string(row) + ", column " +
                    std::to_string(column) + ")"),
          row_(row), column_(column) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

class DimensionMismatch : public DataError {
public:
    using DataError::DataError;
};

}  // namespace sqar
