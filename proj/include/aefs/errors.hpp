#pragma once

#include <stdexcept>
#include <string>

namespace aefs {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Training-mode batch normalization over fewer than two rows.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Selected scores that cannot be L1-normalized.
class DegenerateSelectionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// AUC over a single class, t-test over constant samples, etc.
class UndefinedMetricError : public Error {
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

// Non-finite loss or parameter during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aefs
