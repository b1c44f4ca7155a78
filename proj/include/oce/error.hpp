#pragma once

#include <stdexcept>
#include <string>

namespace oce {

// Invalid argument to a pure function (non-positive modulus, zero-length ray, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed configuration: unknown key, unparsable value, violated invariant.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problems with recordings or derived data: bad files, missing inputs, no surface.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File container could not be parsed. The message names the failing check.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss or another numerical breakdown.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kNumeric = 4;
}  // namespace exit_code

}  // namespace oce
