#pragma once

#include <stdexcept>
#include <string>

namespace irr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record or argument violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Input text could not be parsed into the expected structure.
class ParseError : public Error {
 public:
  ParseError(std::string message, std::string raw = {})
      : Error(std::move(message)), raw_(std::move(raw)) {}

  /// The unparsed input, kept for manual triage.
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Spearman on a vector with zero rank variance, or similar undefined input.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A remote scorer or chat endpoint failed or broke its contract.
class EndpointError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace irr
