// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dcp {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor extent or graph-wiring violation.
struct ShapeError : Error {
  using Error::Error;
};

/// Malformed configuration, unknown keys, invalid hyperparameters.
struct ConfigError : Error {
  using Error::Error;
};

/// Dataset or checkpoint ingestion failure.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values, divergence, degenerate numerics.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace dcp
