// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace volsurf {

/// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInputError : public Error {
  public:
    using Error::Error;
};

/// Tensor/array dimensions do not match what an operation requires.
class ShapeError : public InvalidInputError {
  public:
    using InvalidInputError::InvalidInputError;
};

/// Target price lies outside the static no-arbitrage band.
class OutOfBandError : public InvalidInputError {
  public:
    using InvalidInputError::InvalidInputError;
};

/// An iterative method exhausted its budget without meeting tolerance.
class ConvergenceError : public Error {
  public:
    using Error::Error;
};

/// An intermediate quantity left the representable floating-point range.
class OverflowError : public Error {
  public:
    using Error::Error;
};

/// A random or combined observation mask ended up with zero observed points.
class DegenerateMaskError : public Error {
  public:
    using Error::Error;
};

/// The transformer encoder received an input with no observed tokens.
class AllMaskedError : public Error {
  public:
    using Error::Error;
};

/// A masked loss or metric was requested but no missing point has ground truth.
class NoMissingPointsError : public Error {
  public:
    using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

/// I/O, parsing or file-format failure.
class DataError : public Error {
  public:
    using Error::Error;
};

/// A persisted file has an unknown magic or an unsupported format version.
class FormatError : public DataError {
  public:
    using DataError::DataError;
};

/// A persisted payload failed checksum verification.
class ChecksumError : public DataError {
  public:
    using DataError::DataError;
};

} // namespace volsurf
