#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace facefusion {

enum class ErrorKind {
  Contract,        // precondition or shape violation by the caller
  Capacity,        // identity bank cannot be separated in the requested dimension
  Split,           // overlap split cannot be realized
  Io,              // file could not be opened, read or written
  FormatVersion,   // file carries an unknown magic or version
  Checksum,        // payload does not match its stored checksum (includes truncation)
  Format,          // structurally malformed file
  DegenerateEmbedding,
  NonFinite,
  Config,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::Contract, what);
}

}  // namespace facefusion
