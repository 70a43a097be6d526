#pragma once

#include <stdexcept>
#include <string>

namespace cdmea {

// Bad caller input: out-of-range fraction, dimension mismatch, empty set.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent run configuration (e.g. loss enabled for a removed branch).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset files missing or unreadable.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset contents violate the graph invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed TSV input outside the dataset layout (score imports).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss or parameters became non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdmea
