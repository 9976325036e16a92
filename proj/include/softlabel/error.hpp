#pragma once

#include <stdexcept>
#include <string>

namespace softlabel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (non-finite input, λ = 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid argument combination (identical mixup classes, bad config values, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Filesystem read/write failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace softlabel
