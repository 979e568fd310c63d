#pragma once

#include <stdexcept>
#include <string>

namespace dfcn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is out of its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// On-disk data (tensor files, checkpoints, manifests) is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A NetworkConfig or run configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loaded checkpoint does not match the configuration it was checked against.
class ConfigMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Data content violates a precondition (empty mask, empty roi, bad label, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfcn
