#pragma once

#include <stdexcept>
#include <string>

namespace moepath {

/// Base for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (matrix products, layer dimensions, loaded blobs).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable input file.
class FormatError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class BadVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

/// A caller-supplied argument is outside the operation's domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// An internal invariant failed to hold; indicates a bug or corrupted state.
class InvariantError : public Error {
public:
    using Error::Error;
};

}  // namespace moepath
