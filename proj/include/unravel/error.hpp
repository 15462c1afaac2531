#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unravel {

enum class ErrorCode {
  invalid_argument,
  out_of_range,
  numeric_overflow,
  budget_exceeded,
  io,
  bad_state,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure the library reports carries a stable code so the CLI can
// emit a machine-readable record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::invalid_argument, message);
}

}  // namespace unravel
