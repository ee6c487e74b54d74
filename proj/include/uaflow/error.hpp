#pragma once

#include <stdexcept>
#include <string>

namespace uaflow {

// Base of every error thrown by the library. Subclasses identify the failure
// class so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// A path coefficient that must be nonzero vanished at the requested time.
class SingularTimeError : public Error {
public:
    SingularTimeError(const std::string& what, double t)
        : Error(what + " (t=" + std::to_string(t) + ")"), t_(t) {}
    double time() const noexcept { return t_; }

private:
    double t_;
};

// Non-finite value encountered in a numeric pipeline.
class NumericError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace uaflow
