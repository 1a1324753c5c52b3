#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sysid {

/// Every failure the toolkit reports carries one of these codes so the CLI
/// can map it to a structured diagnostic.
enum class ErrorCode {
  NotElf,
  UnsupportedClass,
  UnsupportedMachine,
  MalformedHeaders,
  NoCodeSegment,
  DecodeFailure,
  AmbiguousParam,
  MissingInterface,
  InterfaceFormat,
  UnresolvedSitesPresent,
  StateBlowup,
  UnresolvedWithoutPolicy,
  UnreadableTrace,
  UnknownSyscallTable,
  Io,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sysid
