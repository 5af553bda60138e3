#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace eagles {

/// Error categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
  kInvalidInput = 1,
  kConfiguration = 2,
  kParse = 3,
  kInvalidState = 4,
  kIo = 5,
  kBadMagic = 6,
  kBadVersion = 7,
  kChecksum = 8,
  kTruncated = 9,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kInvalidState: return "invalid-state";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kBadMagic: return "bad-magic";
    case ErrorKind::kBadVersion: return "bad-version";
    case ErrorKind::kChecksum: return "checksum";
    case ErrorKind::kTruncated: return "truncated";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Format errors carry the name of the file section that failed to verify.
class FormatError : public Error {
 public:
  FormatError(ErrorKind kind, std::string section, const std::string& message)
      : Error(kind, section + ": " + message), section_(std::move(section)) {}

  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace eagles
