#pragma once

#include <stdexcept>
#include <string>

namespace qann {

// Base class for every error raised by the library. The CLI maps
// ConfigError/DataError/ParseError to exit code 2, everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class EmptySupportError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, double backward, etc.
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& where, const std::string& what)
      : DataError(where + ": " + what) {}
};

}  // namespace qann
