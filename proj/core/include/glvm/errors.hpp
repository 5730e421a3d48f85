#pragma once

#include <stdexcept>
#include <string>

namespace glvm {

/// Bad or inconsistent input: malformed files, dimension mismatches,
/// responses that are invalid for the declared family, join failures.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical breakdown: non-finite gradients, degenerate designs,
/// descent violations, vanishing partial information.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Misuse of the command line or of option values.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace glvm
