#pragma once

#include <stdexcept>
#include <string>

namespace depeg {

// Input data violates a type invariant or a file schema. CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A value outside the mathematical domain of an operation (log of a
// non-positive number, empty pool, ...). Treated as a validation failure.
class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Solver did not converge or produced a non-finite result. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace depeg
