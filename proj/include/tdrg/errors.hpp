#pragma once

#include <stdexcept>
#include <string>

namespace tdrg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The equilibrium equations have no solution for the requested reference.
class NoEquilibrium : public Error {
public:
    using Error::Error;
};

/// A history segment does not cover the window a functional needs.
class InsufficientSpan : public Error {
public:
    using Error::Error;
};

/// A history lookup reached before the oldest buffered sample.
class HistoryUnderrun : public Error {
public:
    using Error::Error;
};

/// Certificate search exhausted its budget.
class Infeasible : public Error {
public:
    using Error::Error;
};

class ReferenceNotStrictlyAdmissible : public Error {
public:
    using Error::Error;
};

class DegenerateConstraint : public Error {
public:
    using Error::Error;
};

class InitialMarginViolated : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
    if (!ok)
        throw DimensionMismatch(what);
}

}  // namespace detail

}  // namespace tdrg
