#pragma once

#include <stdexcept>
#include <string>

namespace iak {

// Base of every error the core raises. The C API maps each subclass to a
// status code, and the CLI maps status codes to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed configuration, architecture or dataset description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Shape/geometry mismatch between a layer and the state flowing into it.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& what, long layer_index = -1)
      : Error(layer_index >= 0 ? "layer " + std::to_string(layer_index) + ": " + what : what),
        layer_index_(layer_index) {}

  long layer_index() const noexcept { return layer_index_; }

 private:
  long layer_index_;
};

// Non-PSD covariance, failed factorization, out-of-domain kernel argument.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace iak
