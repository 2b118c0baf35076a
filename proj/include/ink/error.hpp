#pragma once

#include <stdexcept>
#include <string>

namespace ink {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  DegenerateEmbedding,
  MalformedHeader,
  TruncatedPayload,
  NumericalDivergence,
  NotPositiveDefinite,
  Config,
  Io,
};

[[nodiscard]] const char *to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string &what) {
  if (!ok)
    throw Error(code, what);
}

} // namespace ink
