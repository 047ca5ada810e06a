#pragma once

#include <stdexcept>
#include <string>

namespace swiftpan {

// Dims or argument contract violated by an op.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (profile, model, sampler, sensitivity, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong state, e.g. backward before forward.
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File could not be read, written or parsed. The message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure (NaN loss, degenerate metric input).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void warn(const std::string& msg);

}  // namespace swiftpan
