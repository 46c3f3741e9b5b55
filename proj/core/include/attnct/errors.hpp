#pragma once

#include <stdexcept>
#include <string>

namespace attnct {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid architecture, optimizer, or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data: labels, empty inputs, single-class sets.
class InputError : public Error {
 public:
  using Error::Error;
};

/// An object used in a state that does not permit the call.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A named entity (layer, parameter, capture key) that does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward from a non-scalar node.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File system or decoding failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnct
