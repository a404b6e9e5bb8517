#pragma once

#include <stdexcept>
#include <string>

namespace hpl {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid parameters, malformed configuration, or a configuration that
/// cannot be analyzed (e.g. a singular conditional probability matrix).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Insufficient statistics: conditioning on an event with no support.
class StatisticsError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver exhausted its iteration budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace hpl
