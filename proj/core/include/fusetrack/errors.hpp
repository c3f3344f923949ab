// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fusetrack {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or a diverging computation; the CLI maps this to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A value violates a domain invariant (non-orthonormal rotation, bad index...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Frame has fewer than the required IMU samples of history.
class WarmupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fusetrack
