#pragma once

#include <stdexcept>
#include <string>

namespace magtach {

enum class ErrorKind {
  InvalidInput,
  Config,
  Io,
  Pipeline,
};

/// Every failure in the core library surfaces as this exception type. The C
/// API maps `kind()` onto its status codes.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) {
  throw Error(kind, what);
}

inline void require(bool ok, const std::string &what) {
  if (!ok) {
    throw Error(ErrorKind::InvalidInput, what);
  }
}

} // namespace magtach
