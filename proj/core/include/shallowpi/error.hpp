// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shallowpi {

enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  OutOfRange,
  InvalidState,
  Io,
  Format,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// The single exception type thrown by the library. `kind()` is stable and
/// is what the CLI reports in its machine-readable error output.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace shallowpi
