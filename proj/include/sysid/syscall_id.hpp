#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sysid/cfg.hpp"
#include "sysid/symexec.hpp"
#include "sysid/types.hpp"

namespace sysid {

inline constexpr std::uint64_t kMaxSyscallNumber = 547;

/// Where a wrapper receives the syscall number, as seen at its entry.
struct ParamLocation {
  enum class Kind : std::uint8_t { Register, StackSlot };
  Kind kind = Kind::Register;
  Gpr reg = Gpr::Rdi;
  std::int64_t offset = 0;  // StackSlot: bytes above rsp at entry (8 = first stack arg)

  static ParamLocation in_register(Gpr g) { return {Kind::Register, g, 0}; }
  static ParamLocation on_stack(std::int64_t off) { return {Kind::StackSlot, Gpr::Rax, off}; }

  /// Query reading this parameter at the wrapper's first instruction.
  Query at_entry() const;
  /// Query reading it at a `call` instruction that enters the wrapper.
  Query at_call() const;

  auto operator<=>(const ParamLocation&) const = default;
};

/// "rdi", "stack+8"
std::string to_string(const ParamLocation& p);
std::optional<ParamLocation> parse_param_location(std::string_view s);

enum class WrapperEvidence : std::uint8_t {
  UdchainOnlyNegative,  // phase 1 found rax defined by in-function constants
  SymbolicNegative,     // phase 2 resolved rax inside the function
  SymbolicConfirmed,    // phase 2 found an entry symbol in rax
};

std::string_view to_string(WrapperEvidence e);

struct WrapperInfo {
  Addr function = 0;
  ParamLocation param_location;
  WrapperEvidence confirmed_by = WrapperEvidence::SymbolicConfirmed;
  // Constants reaching rax on paths that do not use the parameter.
  SyscallSet constants;

  bool operator==(const WrapperInfo&) const = default;
};

struct WrapperDecision {
  enum class Kind : std::uint8_t { NotWrapper, Wrapper, Ambiguous };
  Kind kind = Kind::NotWrapper;
  WrapperEvidence evidence = WrapperEvidence::UdchainOnlyNegative;
  std::optional<WrapperInfo> wrapper;  // set iff kind == Wrapper

  bool is_wrapper() const { return kind == Kind::Wrapper; }
};

struct IdentifyOptions {
  ExecBudget budget;
  ExecOptions exec;
  std::size_t max_call_depth = 3;
  std::uint64_t max_syscall_number = kMaxSyscallNumber;
  bool wrapper_heuristic = true;
  unsigned jobs = 1;
};

/// Phase 1: backward use-define scan inside `func`. True when every
/// backward path from `site` defines rax from an in-function constant.
bool rax_defined_locally(const Cfg& cfg, const FuncInfo& func, Addr site);

/// Two-phase wrapper detection for the syscall instruction at `site`.
WrapperDecision detect_wrapper(const Cfg& cfg, const FuncInfo& func, Addr site,
                               const IdentifyOptions& opts = {});

struct SyscallSite {
  Addr address = 0;
  Addr function = 0;
  bool in_wrapper = false;
  SyscallSet numbers;
  std::optional<std::string> unresolved;  // reason, when the site is unresolved
  std::size_t paths_explored = 0;
  // Numbers grouped by the function whose code defines them; for wrapper
  // sites these are the callers, not the wrapper.
  std::map<Addr, SyscallSet> by_function;
  // Exported wrapper in a shared object: callers outside the library supply
  // further numbers at link time.
  bool param_from_caller = false;

  bool resolved() const { return !unresolved.has_value(); }
  bool operator==(const SyscallSite&) const = default;
};

struct SearchResult {
  SyscallSet numbers;
  std::map<Addr, SyscallSet> by_function;
  std::optional<std::string> unresolved;
  std::size_t paths = 0;
  bool reached_param_root = false;
  Diagnostics diagnostics;
};

/// Backward BFS over predecessors of the block holding `target`, running a
/// directed forward search from each frontier block toward `target`.
/// Frontiers that resolve the query stop the expansion along their path.
/// With `callers_within` set, only those blocks may take part (used to keep
/// wrapper searches to reachable call sites). `root_supplies_param` accepts
/// a still-symbolic start block that is itself an entry node.
SearchResult backward_search(const Cfg& cfg, Addr target, const Query& query,
                             const IdentifyOptions& opts,
                             const std::set<Addr>* callers_within = nullptr,
                             bool root_supplies_param = false);

/// Resolves one syscall site, through its wrapper's callers when it has one.
SyscallSite identify_site(const Cfg& cfg, Addr site, const std::optional<WrapperInfo>& wrapper,
                          const IdentifyOptions& opts = {});

struct ProgramIdentification {
  std::map<Addr, SyscallSite> sites;
  std::map<Addr, WrapperInfo> wrappers;  // by function entry
  SyscallSet syscalls;
  bool complete = true;
  std::vector<Addr> unresolved_sites;
  std::vector<Addr> poisoned_functions;  // reachable ones
  Diagnostics diagnostics;
};

ProgramIdentification identify_program(const Cfg& cfg, const IdentifyOptions& opts = {});

}  // namespace sysid
