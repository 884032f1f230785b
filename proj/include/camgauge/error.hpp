#pragma once

#include <stdexcept>
#include <string>

namespace camgauge {

/// Input violates a documented precondition (shape mismatch, non-finite values, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Named entity (layer, method, metric) is not registered.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A metric is mathematically undefined for the given inputs (e.g. zero confidence).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dataset generation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File or directory could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace camgauge
