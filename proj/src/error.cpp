#include "error.hpp"

namespace mitodet {

const char* error_category(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Prerequisite: return "prerequisite";
    case ErrorCode::Version: return "version";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

}  // namespace mitodet
