#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trackgpt {

enum class ErrorCode {
  Input,     // caller passed out-of-range or malformed arguments
  Config,    // an invalid configuration or derived configuration
  Coverage,  // point falls outside the codec's prefix cell
  Data,      // a dataset cannot satisfy the request (empty, too short)
  Parse,     // malformed file contents
  Numeric,   // non-finite values during training
  Io,        // filesystem failures
};

/// Stable machine-parseable identifier, e.g. "E_COVERAGE".
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace trackgpt
