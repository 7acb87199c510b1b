#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace smckq {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFinite,
  kGramSingular,
  kDuplicatePoints,
  kEmptyPointSet,
  kDegenerateWeights,
  kSupportMismatch,
  kInsufficientUniqueStates,
  kObjectiveNonFinite,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorCode code) noexcept;

// All library failures surface as this exception; `code()` identifies the
// failure class so callers can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace smckq
