#pragma once

#include <stdexcept>
#include <string>

namespace recall {

// Invalid user-facing configuration (bad JSON, out-of-range field, unknown
// enum value). The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A trained artifact failed a quality gate (detector accuracy, codec
// reconstruction, forgetting/preservation thresholds). Exit code 3.
struct GateError : std::runtime_error {
    explicit GateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical breakage (NaN/Inf where finite values are required).
struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace recall
