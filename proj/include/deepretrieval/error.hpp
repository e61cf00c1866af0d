#pragma once

#include <stdexcept>
#include <string>

namespace dr {

/// Tensor or vector dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-supplied value is outside its valid domain (node index, item id, config field).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf reached a place that requires finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Internal bookkeeping disagrees with itself.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Stored artifact failed its checksum or could not be parsed.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stored artifact was written by an incompatible format version.
class MigrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dr
