#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gtimm {

// Input data is malformed or inconsistent with the declared schema.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t row, std::string column)
        : DataError(what), row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

// A computation failed: singular system, divergence, not enough degrees of freedom.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A terminal region is too small to carry its own linear model.
class IllPosedRegionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Non-fatal diagnostics collected by operations that degrade gracefully.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink != nullptr) sink->push_back(std::move(message));
}

}  // namespace gtimm
