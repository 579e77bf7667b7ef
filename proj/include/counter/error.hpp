#pragma once

#include <stdexcept>
#include <string>

namespace counter {

/// Malformed or missing input data (bad lines, missing artifacts).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Inconsistent configuration or artifacts produced under another config.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure inside a solver (non-finite loss and the like).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace counter
