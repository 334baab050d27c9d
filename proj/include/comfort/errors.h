// SPDX-License-Identifier: Apache-2.0
//
// Error hierarchy shared by every module. The CLI maps each family onto an
// exit code, so new errors should derive from one of these.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace comfort {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    virtual const char *kind() const noexcept { return "error"; }
};

/// Shapes that do not agree.
class DimensionError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "dimension"; }
};

/// Inputs that violate a documented precondition.
class ValidationError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "validation"; }
};

/// NaN/Inf, singular denominators, divergence.
class NumericError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "numeric"; }
};

/// Operation not valid in the object's current state.
class StateError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "state"; }
};

class NotFoundError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "not_found"; }
};

/// Malformed file contents. `offset` is the byte position where decoding failed.
class FormatError : public Error {
  public:
    FormatError(const std::string &what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    const char *kind() const noexcept override { return "format"; }
    std::uint64_t offset() const noexcept { return offset_; }

  private:
    std::uint64_t offset_;
};

class VersionError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "version"; }
};

class IoError : public Error {
  public:
    using Error::Error;
    const char *kind() const noexcept override { return "io"; }
};

}  // namespace comfort
