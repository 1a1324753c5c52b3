#include "sysid/error.hpp"

#include <cstdio>

#include "sysid/types.hpp"

namespace sysid {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotElf: return "NotElf";
    case ErrorCode::UnsupportedClass: return "UnsupportedClass";
    case ErrorCode::UnsupportedMachine: return "UnsupportedMachine";
    case ErrorCode::MalformedHeaders: return "MalformedHeaders";
    case ErrorCode::NoCodeSegment: return "NoCodeSegment";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::AmbiguousParam: return "AmbiguousParam";
    case ErrorCode::MissingInterface: return "MissingInterface";
    case ErrorCode::InterfaceFormat: return "InterfaceFormat";
    case ErrorCode::UnresolvedSitesPresent: return "UnresolvedSitesPresent";
    case ErrorCode::StateBlowup: return "StateBlowup";
    case ErrorCode::UnresolvedWithoutPolicy: return "UnresolvedWithoutPolicy";
    case ErrorCode::UnreadableTrace: return "UnreadableTrace";
    case ErrorCode::UnknownSyscallTable: return "UnknownSyscallTable";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string hex(Addr addr) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(addr));
  return buf;
}

std::string_view to_string(Diagnostic::Severity s) {
  switch (s) {
    case Diagnostic::Severity::Info: return "info";
    case Diagnostic::Severity::Warning: return "warning";
    case Diagnostic::Severity::Error: return "error";
  }
  return "warning";
}

}  // namespace sysid
