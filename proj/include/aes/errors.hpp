#pragma once

#include <stdexcept>
#include <string>

namespace aes {

// Error hierarchy. The CLI maps ConfigError/DataError to exit code 2 and
// NumericalError to exit code 3.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (empty grids, bad thresholds, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A solver failed to converge or bracket a root.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// No usable effect size could be extracted from a fitted model.
class EstimationError : public Error {
public:
    using Error::Error;
};

}  // namespace aes
