#pragma once

#include <stdexcept>
#include <string>

namespace smp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched dimensions or otherwise malformed arguments.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, rank-deficient regressions and similar failures.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Configuration text could not be parsed or validated.
class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw PreconditionError(what);
}

}  // namespace detail
}  // namespace smp
