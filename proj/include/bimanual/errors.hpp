#pragma once

#include <stdexcept>
#include <string>

namespace bimanual {

// Error families map onto CLI exit codes (2 config, 3 data, 4 divergence).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violations on in-memory values (shape mismatch, bad history).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace bimanual
