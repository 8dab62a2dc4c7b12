#pragma once

#include <stdexcept>
#include <string>

namespace cmr {

/// Raised when an input violates a documented precondition (bad shapes,
/// invalid probabilities, unsupported mode combinations). Maps to CLI exit
/// code 2.
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what)
        : std::invalid_argument(what) {}
};

/// Raised when a computation fails numerically (non-convergence, singular
/// matrix where a true inverse is required). Maps to CLI exit code 3.
class NumericalFailure : public std::runtime_error {
public:
    explicit NumericalFailure(const std::string& what)
        : std::runtime_error(what) {}
};

}  // namespace cmr
