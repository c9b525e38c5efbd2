#pragma once

#include <stdexcept>
#include <string>

namespace moe {

enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Format = 3,
  ShapeMismatch = 4,
  Numeric = 5,
  Unsupported = 6,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace moe
