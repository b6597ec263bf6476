#pragma once

#include <stdexcept>
#include <string>

namespace pb4u {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidMesh,
  kInvalidState,
  kNumericFailure,
  kNumericDivergence,
  kIo,
  kFormat,
  kConfigMismatch,
  kUsage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pb4u
