#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scope {

// Base of every error the library throws. Subclasses exist so callers (and
// tests) can tell failure kinds apart without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated (empty input, bad shape...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values showed up where finite ones are required (NaN loss etc.).
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// File does not carry the expected magic or its header is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::uint64_t offset)
      : Error(what + " (truncated at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Dempster combination with (numerically) total conflict.
class ConflictError : public Error {
 public:
  using Error::Error;
};

// A metric is mathematically undefined for the given input.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace scope
