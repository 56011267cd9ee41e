#pragma once

#include <stdexcept>
#include <string>

namespace ctseg {

// Error taxonomy. Everything derives from Error so callers can catch the
// whole family; the CLI maps Error -> exit code 2, usage problems -> 1.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class NumericsError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class UnsupportedError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// A metric whose denominator is empty (e.g. Dice of two empty masks).
// evaluate_case catches this and records the metric as missing.
class UndefinedMetric : public Error {
public:
  using Error::Error;
};

class NoBodyFound : public DataError {
public:
  using DataError::DataError;
};

}  // namespace ctseg
