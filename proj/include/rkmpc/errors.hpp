#pragma once

#include <stdexcept>
#include <string>

namespace rkmpc {

// Base class for every error thrown by this library, so callers can catch
// one type at the CLI boundary and map it to a nonzero exit code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file (CSV/JSON): message carries file context and, where
// known, the 1-based line number of the offending record.
struct ParseError : Error {
  using Error::Error;
};

// Structurally valid input that violates a domain precondition
// (too few track points, invalid parameter ranges, bad config values).
struct InvalidArgument : Error {
  using Error::Error;
};

// Track has fewer than 3 usable centerline points.
struct TooFewPoints : Error {
  using Error::Error;
};

// Matrix/sequence dimensions inconsistent with the requested operation.
struct DimensionMismatch : Error {
  using Error::Error;
};

// Metric aggregation over a log with no records.
struct EmptyLog : Error {
  using Error::Error;
};

// A reference point that cannot be linearized (steering at +-pi/2).
struct DegenerateReference : Error {
  using Error::Error;
};

// Requested speed profile cannot be realized on the track.
struct InfeasibleSpeed : Error {
  using Error::Error;
};

// QP Hessian failed the positive-definiteness check after regularization.
struct IllConditioned : Error {
  using Error::Error;
};

// Open reference trajectory ran out of points for the lookahead window.
struct ReferenceExhausted : Error {
  using Error::Error;
};

// Not enough samples to pose the requested least-squares / training problem.
struct InsufficientData : Error {
  using Error::Error;
};

// One-step input recovery could not explain a logged transition within
// the configured residual threshold.
struct InversionFailure : Error {
  using Error::Error;
};

}  // namespace rkmpc
