#pragma once

#include <stdexcept>
#include <string>

namespace bpeq {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File opened but its content violates the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Two grids that must share a lattice do not.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Input is structurally valid but carries no usable information
// (constant volume, empty mask, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A model backend failed to produce a prediction.
class BackendError : public Error {
 public:
  using Error::Error;
};

// A submitted record breaks a named rule. rule() is the exact rule text
// reported back to clients.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::string rule) : Error(rule), rule_(std::move(rule)) {}
  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string rule_;
};

}  // namespace bpeq
