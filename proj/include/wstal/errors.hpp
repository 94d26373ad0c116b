#pragma once

#include <stdexcept>
#include <string>

namespace wstal {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents of operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the accepted domain (k > extent, bad ratio, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (non-scalar loss, empty label).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A forward operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace wstal
