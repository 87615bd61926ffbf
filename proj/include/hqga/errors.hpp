// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy. The CLI maps each family to a process exit code.

#pragma once

#include <stdexcept>
#include <string>

namespace hqga {

// Invalid configuration, shapes or switch combinations. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or non-finite input data. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingArrayError : public DataError {
 public:
  explicit MissingArrayError(const std::string& name)
      : DataError("archive is missing array \"" + name + "\""), name_(name) {}
  const std::string& array_name() const noexcept { return name_; }

 private:
  std::string name_;
};

class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptManifestError : public DataError {
 public:
  using DataError::DataError;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class GenerationError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite training loss. Exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Top-down tracing requested on a trace with an ablated level.
class PathUnavailableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hqga
