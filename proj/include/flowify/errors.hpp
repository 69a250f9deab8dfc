#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowify {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A linear-layer operation was called in the wrong dimension regime.
class RegimeError : public Error {
 public:
  using Error::Error;
};

/// Invalid geometry for repetition / unfold / padding.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// A per-frequency matrix is (numerically) singular.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (non-integer pixels, bad CSV, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary file could not be parsed; carries the offending byte offset.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Bad or inconsistent configuration / model description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A likelihood contribution became NaN or infinite.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::ptrdiff_t layer_index)
      : Error(what), layer_index_(layer_index) {}
  /// Index of the offending layer, -1 for the base density or the loss itself.
  std::ptrdiff_t layer_index() const noexcept { return layer_index_; }

 private:
  std::ptrdiff_t layer_index_;
};

}  // namespace flowify
