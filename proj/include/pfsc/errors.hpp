#pragma once

#include <stdexcept>
#include <string>

namespace pfsc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or field. `where` is a line number or a JSON pointer.
class ParseError : public Error {
public:
    ParseError(const std::string& where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(where), message_(what) {}

    const std::string& where() const noexcept { return where_; }
    const std::string& message() const noexcept { return message_; }

private:
    std::string where_;
    std::string message_;
};

/// Input parsed fine but violates a model invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Inconsistent shapes or indices handed to a numerical routine.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: divergence, singular systems, degenerate steps.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Load flow did not reach tolerance.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, double last_mismatch, int iterations)
        : NumericalError(what), last_mismatch_(last_mismatch), iterations_(iterations) {}

    double last_mismatch() const noexcept { return last_mismatch_; }
    int iterations() const noexcept { return iterations_; }

private:
    double last_mismatch_;
    int iterations_;
};

}  // namespace pfsc
