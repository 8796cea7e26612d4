#pragma once

#include <stdexcept>
#include <string>

namespace lmds {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  invalid_argument,
  config,
  io,
  format,
  endpoint,
  degenerate_data,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::config: return "config error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::format: return "format error";
    case ErrorKind::endpoint: return "endpoint failure";
    case ErrorKind::degenerate_data: return "degenerate data";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace lmds
