#pragma once

#include <stdexcept>

namespace anople {

// Bad or inconsistent configuration values (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing / unreadable dataset files, malformed weight files (exit code 3).
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric undefined on the given data, e.g. AUROC with one class (exit code 4).
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-range argument to an operation.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called on an object in the wrong state (e.g. empty memory bank).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class FormatError : public IngestionError {
 public:
  using IngestionError::IngestionError;
};

class TokenizerError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace anople
