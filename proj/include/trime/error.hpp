#pragma once

#include <stdexcept>
#include <string>

namespace trime {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Raised when an operation produces NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace trime
