#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iognn {

/// Root of every error the library throws. Callers that only need to know
/// "something went wrong" catch this; the CLI maps the subclasses onto exit
/// codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not chain or do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A domain object would violate its invariants (bad node id, duplicate edge,
/// non-symmetric input, fingerprint mismatch, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A row/node selection that must be non-empty was empty.
class EmptySelectionError : public Error {
public:
    using Error::Error;
};

/// An operation received a parameter outside its legal range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Inconsistent or unknown configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed convergence, singular covariance.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed text input. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class UnsupportedVersionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

} // namespace iognn
