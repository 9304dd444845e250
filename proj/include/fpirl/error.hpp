#pragma once

#include <stdexcept>
#include <string>

namespace fpirl {

/// Base class for all library errors. `exit_code()` is the CLI contract:
/// 2 config, 3 I/O, 4 numerical or physical failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid arguments, malformed configuration or input schema.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// File system and format problems.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Numerical breakdown or a physically meaningless result.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace fpirl
