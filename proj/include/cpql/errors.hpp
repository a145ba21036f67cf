#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpql {

/// Root of every error the engine raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an operation's contract (dimension mismatch, missing tape, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown name.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (nonfinite loss, gradient or target).
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset or checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace cpql
