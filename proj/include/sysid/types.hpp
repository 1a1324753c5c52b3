#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sysid {

using Addr = std::uint64_t;
using SyscallNumber = std::uint64_t;
using SyscallSet = std::set<SyscallNumber>;

std::string hex(Addr addr);

/// A non-fatal finding surfaced to the user (and to the --json stream).
struct Diagnostic {
  enum class Severity { Info, Warning, Error };
  Severity severity = Severity::Warning;
  std::string code;  // stable machine-readable tag, e.g. "decode-failure"
  std::optional<Addr> address;
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

std::string_view to_string(Diagnostic::Severity s);

using Diagnostics = std::vector<Diagnostic>;

}  // namespace sysid
