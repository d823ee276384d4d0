#pragma once

#include <stdexcept>
#include <string>

namespace cmwnet {

// Exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return kExitData; }
};

/// Invalid configuration or incompatible ablation switches.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitUsage; }
};

/// Tensor shapes that do not line up (mis-wired graph or bad input).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, missing, or malformed files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingPretrainedError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitNumerical; }
};

}  // namespace cmwnet
