#pragma once

#include <stdexcept>
#include <string>

namespace stlgsl {

// Process exit codes used by the command line front end.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration, shape contract violations and bad arguments.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Malformed or unreadable files, degenerate datasets.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// NaN/Inf losses, divergence.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Shape mismatch inside the tensor layer. Reported as a configuration error.
class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& what) : ConfigError(what) {}
};

}  // namespace stlgsl
