#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sysid/types.hpp"

namespace sysid {

/// Number <-> name mapping for x86-64 Linux system calls, pinned to a kernel
/// version. Tables are compiled in from data/syscalls/*.tbl.
class SyscallTable {
 public:
  /// Parses the "<number> <name>" line format; '#' starts a comment.
  static SyscallTable parse(std::string_view text, std::string tag);

  /// Looks up an embedded table. Throws UnknownSyscallTable.
  static const SyscallTable& for_kernel(std::string_view tag);
  static const SyscallTable& latest();
  static std::vector<std::string> available_tags();

  const std::string& tag() const { return tag_; }
  std::optional<std::string_view> name(SyscallNumber nr) const;
  std::optional<SyscallNumber> number(std::string_view name) const;
  SyscallNumber max_number() const;
  SyscallSet all() const;
  std::size_t size() const { return by_number_.size(); }

  /// Name if known, else "syscall_<n>".
  std::string display_name(SyscallNumber nr) const;

 private:
  std::string tag_;
  std::map<SyscallNumber, std::string> by_number_;
  std::map<std::string, SyscallNumber, std::less<>> by_name_;
};

}  // namespace sysid
