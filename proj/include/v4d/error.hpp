// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace v4d {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents, bad axis indices, out-of-range labels.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration documents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint contents that do not fit the network they are loaded into.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// File system and decode failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Divergence or NaN gradients during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace v4d
