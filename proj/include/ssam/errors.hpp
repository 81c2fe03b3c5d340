#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssam {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An input is mathematically degenerate, e.g. a zero-norm row fed to a cosine.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced a NaN or infinity.
class NumericError : public Error {
 public:
  NumericError(std::string primitive, const std::string& what)
      : Error(what), primitive_(std::move(primitive)) {}

  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

/// A binary file could not be decoded. Carries the byte offset of the failure.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& what)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Synthetic data generation produced a dataset the frozen encoder cannot separate.
class GenerationQualityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace ssam
