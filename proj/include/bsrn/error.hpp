// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace bsrn {

/// Raised when tensor shapes, geometries, or configurations are inconsistent.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid configuration values (presets, scales, codes).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed or incompatible files (PNG, checkpoints, datasets).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when training diverges.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsrn
