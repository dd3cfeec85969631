#pragma once

#include <stdexcept>
#include <string>

namespace vidloop {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed store file: bad magic, bad version, truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

// Structured reply from a backend could not be interpreted.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Network-level failure after retries were exhausted.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Backend answered with HTTP status >= 400.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& message)
      : Error(message), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace vidloop
