#pragma once

#include <stdexcept>
#include <string>

namespace homopursuit {

/// Shape mismatch, index out of range, or otherwise invalid argument.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite input or intermediate value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A matrix that must be inverted (or square-rooted) is numerically singular.
class SingularityError : public NumericError {
public:
    using NumericError::NumericError;
};

/// The loss became non-finite during an iterative fit.
class DivergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Malformed or invalid configuration / dataset description.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace homopursuit
