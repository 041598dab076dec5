#pragma once

#include <stdexcept>
#include <string>

namespace baeeeg {

// Exit-code classes used by the command-line frontend:
// validation -> 2, numerical -> 3, I/O -> 4.

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ResolutionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class LocationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class StatisticsError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class AssemblyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace baeeeg
