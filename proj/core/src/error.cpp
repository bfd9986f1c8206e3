#include "splatmark/error.hpp"

namespace splatmark {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kCapacity: return "capacity";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace splatmark
