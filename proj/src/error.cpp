#include "facefusion/error.hpp"

namespace facefusion {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Capacity: return "capacity error";
    case ErrorKind::Split: return "split error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::FormatVersion: return "format version error";
    case ErrorKind::Checksum: return "checksum error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::DegenerateEmbedding: return "degenerate embedding";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::Config: return "config error";
  }
  return "error";
}

}  // namespace facefusion
