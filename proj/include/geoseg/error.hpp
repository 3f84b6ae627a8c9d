#pragma once

#include <stdexcept>
#include <string>

namespace geoseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid camera model, pose or raster extents.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (double backward, non-scalar loss, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or missing on-disk data. `where()` names the file and field.
class FormatError : public Error {
 public:
  FormatError(std::string where, const std::string& what)
      : Error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Training hit a state it cannot continue from (non-finite gradients, empty supervision).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoseg
