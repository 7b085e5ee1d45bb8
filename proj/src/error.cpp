#include "fedgrid/error.hpp"

namespace fedgrid {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kDimension: return "dimension mismatch";
    case ErrorCode::kSingular: return "singular system";
    case ErrorCode::kNumeric: return "numeric failure";
    case ErrorCode::kCapacity: return "capacity exceeded";
    case ErrorCode::kKeyMismatch: return "key mismatch";
    case ErrorCode::kBudgetExceeded: return "budget exceeded";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kConfig: return "configuration error";
  }
  return "unknown error";
}

}  // namespace fedgrid
