#pragma once

#include <stdexcept>
#include <string>

namespace ppg {

// Input that failed to parse or violated a documented precondition.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime: divergence, NaN loss, non-finite intermediate.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ppg
