#pragma once

#include <stdexcept>
#include <string>

namespace ltrack {

/// Runtime failure inside the library (bad data, numerical breakdown, I/O).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or usage; the CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ltrack
