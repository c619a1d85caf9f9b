#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sptm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Derivation target side does not reproduce the candidate tokens.
class DerivationMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Matrix or vector dimensions disagree (model files, feature vectors).
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sptm
