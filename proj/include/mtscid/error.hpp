#pragma once

#include <stdexcept>
#include <string>

namespace mtscid {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or configuration dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity was produced or supplied where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, parsed or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtscid
