#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dino {

// Base class for every error raised by the library. `kind()` is a stable,
// machine-parseable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

// A scalar argument is outside its domain (temperature <= 0, k > N, ...).
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

// A caller broke an API contract (backward on a non-scalar, structural mismatch).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// Malformed on-disk container. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error("format", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace dino
