#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cms {

enum class ErrorCode {
  kFormat,         // bad magic, version or token
  kCorruption,     // truncated payload, size overflow
  kDegenerate,     // zero-norm rows, cancelling aggregates
  kIo,
  kValidation,     // config or argument out of range
  kConstraint,     // manifest invariant violated
  kNumeric,        // non-finite values
  kInfeasible,     // generator could not satisfy its config
  kEmpty,          // empty bank, matrix or scope
  kScopeMismatch,  // assignments do not cover the evaluated items
  kShapeMismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kCorruption: return "corruption error";
    case ErrorCode::kDegenerate: return "degenerate input";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kConstraint: return "constraint error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kInfeasible: return "infeasible config";
    case ErrorCode::kEmpty: return "empty input";
    case ErrorCode::kScopeMismatch: return "scope mismatch";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
  }
  return "error";
}

}  // namespace cms
