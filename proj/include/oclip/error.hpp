#pragma once

#include <stdexcept>
#include <string>

namespace oclip {

enum class ErrorKind {
  kDimension,
  kIndex,
  kContract,
  kFormat,
  kVersion,
  kTruncated,
  kShape,
  kDivergence,
  kIo,
  kUsage,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so the C layer can map
// it onto a status code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace oclip
