#pragma once

#include <stdexcept>
#include <string>

namespace knowmri {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kIo,
  kShapeMismatch,
  kUnsupported,
  kOutOfRange,
  kValidation,
  kNumerical,
  kUnavailable,
  kOverloaded,
  kInternal,
};

const char* error_code_name(ErrorCode code);

// All recoverable failures in the core surface as this exception; the C API
// translates the code into a status value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace knowmri
