#pragma once

#include <stdexcept>
#include <string>

namespace fedgrid {

enum class ErrorCode {
  kInvalidArgument,
  kParse,
  kValidation,
  kDimension,
  kSingular,
  kNumeric,
  kCapacity,
  kKeyMismatch,
  kBudgetExceeded,
  kIo,
  kConfig,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the library. The code drives the C API status
// and the CLI exit code; the message names the failing stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedgrid
