#pragma once

#include <stdexcept>
#include <string>

namespace realanon {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/image shapes do not agree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Both operands of an overlap computation are empty.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a trustworthy result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A candidate record lacks an annotation required by the filter rules.
class IncompleteRecordError : public Error {
 public:
  IncompleteRecordError(const std::string& field)
      : Error("incomplete record: missing field '" + field + "'"), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File or codec failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace realanon
