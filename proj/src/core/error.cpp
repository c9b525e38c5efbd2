#include "core/error.hpp"

namespace moe {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Unsupported: return "unsupported";
  }
  return "unknown";
}

}  // namespace moe
