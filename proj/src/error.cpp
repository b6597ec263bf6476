#include "pb4u/error.hpp"

namespace pb4u {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidMesh: return "invalid-mesh";
    case ErrorKind::kInvalidState: return "invalid-state";
    case ErrorKind::kNumericFailure: return "numeric-failure";
    case ErrorKind::kNumericDivergence: return "numeric-divergence";
    case ErrorKind::kIo: return "io-error";
    case ErrorKind::kFormat: return "format-error";
    case ErrorKind::kConfigMismatch: return "config-mismatch";
    case ErrorKind::kUsage: return "usage-error";
  }
  return "unknown";
}

}  // namespace pb4u
