#pragma once

#include <stdexcept>
#include <string>

namespace lanepilot {

// Base for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (dimensions, thresholds, rates).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A pose lies outside the region the track geometry covers.
class OffTrackError : public Error {
 public:
  using Error::Error;
};

// Training produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lanepilot
