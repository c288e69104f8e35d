#pragma once

#include <stdexcept>
#include <string>

namespace mitodet {

enum class ErrorCode {
  InvalidArgument = 1,
  Io,
  Parse,
  NotFound,
  Prerequisite,
  Version,
  Numeric,
  Internal,
};

const char* error_category(ErrorCode code) noexcept;

// Every failure surfaced by the library is an Error; the category is what the
// C API maps onto its status codes.
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

}  // namespace mitodet
