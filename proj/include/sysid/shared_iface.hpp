#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sysid/cfg.hpp"
#include "sysid/syscall_id.hpp"

namespace sysid {

inline constexpr int kInterfaceSchemaVersion = 1;

struct FunctionSummary {
  SyscallSet syscalls;     // numbers defined by this function's own code
  std::set<Addr> callees;  // direct calls and tail jumps inside the library
  std::set<Addr> callers;

  bool operator==(const FunctionSummary&) const = default;
};

/// Reusable result of analyzing one shared object.
struct SharedInterface {
  int schema_version = kInterfaceSchemaVersion;
  std::string library;  // soname, else file name
  std::uint64_t interface_id = 0;  // content hash of the library file
  std::vector<std::string> needed;
  std::map<Addr, FunctionSummary> func_graph;
  std::map<std::string, Addr> symbols;  // exported name -> function
  std::map<std::string, std::string> symbol_versions;
  // Function -> functions whose address it takes.
  std::map<Addr, std::vector<Addr>> at_triggers;
  // Functions holding a syscall site whose number stayed unknown.
  std::vector<Addr> unresolved_sites;
  // Functions with an indirect call or jump (targets recomputed at link time).
  std::vector<Addr> indirect_callers;
  std::vector<Addr> wrappers;
  std::map<Addr, ParamLocation> wrapper_params;
  // Function -> providing library -> imported names it calls.
  std::map<Addr, std::map<std::string, std::vector<std::string>>> external_refs;
  std::map<std::string, Addr> plt_relocs;
  std::vector<Addr> poisoned;

  bool operator==(const SharedInterface&) const = default;
};

/// Canonical JSON: sorted keys, addresses as decimal strings, sets as sorted
/// arrays. Equal interfaces serialize to identical bytes.
std::string to_json(const SharedInterface& iface);
SharedInterface interface_from_json(std::string_view text);  // throws InterfaceFormat
void save_interface(const SharedInterface& iface, const std::filesystem::path& path);
SharedInterface load_interface(const std::filesystem::path& path);
std::string interface_file_name(const std::string& library);  // "<lib>.iface.json"

/// Builds a library's interface from its analysis. `providers` maps each
/// imported name to the dependency library defining it, when known.
SharedInterface make_interface(const Cfg& cfg, const ProgramIdentification& ident,
                               const std::map<std::string, std::string>& providers = {});

/// Full pipeline on a shared object with every export as an entry point.
/// Functions whose address is taken by reachable code become roots too.
SharedInterface analyze_library(const std::filesystem::path& path, const IdentifyOptions& opts = {},
                                const std::vector<std::filesystem::path>& search_dirs = {});

/// Dependency graph rooted at the executable. Libraries in a NEEDED cycle
/// are merged into one node named "a+b".
struct DepDag {
  std::string root;
  std::vector<std::string> nodes;  // root first, then libraries
  std::set<std::pair<std::string, std::string>> edges;  // (dependent, dependency)
  std::vector<std::string> order;  // dependencies before dependents, root last
  std::map<std::string, std::vector<std::string>> members;  // merged node -> libraries
  std::vector<std::string> search_order;  // libraries in loader lookup order (breadth-first)
};

DepDag build_dep_dag(const std::string& root, const std::vector<std::string>& root_needed,
                     const std::map<std::string, std::vector<std::string>>& needed);

struct LinkOptions {
  IdentifyOptions identify;
  // Syscalls the dynamic loader performs before the program runs.
  SyscallSet loader_baseline;
  // Interfaces of runtime-loaded modules: every export counts as reachable.
  std::vector<SharedInterface> dlopen_modules;
};

struct LinkResult {
  SyscallSet program_syscalls;
  bool complete = true;
  DepDag dag;
  std::map<std::string, std::set<Addr>> reachable;  // library -> reachable functions
  // library -> reachable export -> syscalls it can trigger (callees included).
  std::map<std::string, std::map<std::string, SyscallSet>> export_syscalls;
  std::map<std::string, SyscallSet> import_syscalls;  // executable import -> syscalls
  std::map<std::string, SyscallSet> module_syscalls;  // dlopen module -> syscalls
  std::map<std::uint64_t, std::set<std::string>> provenance;  // number -> sources
  // A library reached an indirect call, so the executable's own address-taken
  // functions may be called back and should be analyzed as roots.
  bool needs_callback_roots = false;
  Diagnostics diagnostics;
};

/// Resolves the executable's imports through its dependency interfaces.
/// Throws MissingInterface naming every dependency without an interface.
LinkResult link_and_resolve(const Cfg& exe_cfg, const ProgramIdentification& exe_ident,
                            const std::map<std::string, SharedInterface>& ifaces,
                            const LinkOptions& opts = {});

/// Default loader baseline (numbers the glibc dynamic loader issues).
SyscallSet default_loader_baseline();

/// Locates a library by name: `dirs` first, then the standard system paths.
std::optional<std::filesystem::path> find_library(const std::string& name,
                                                  const std::vector<std::filesystem::path>& dirs);

/// Search directories for an image's dependencies: its runpath with $ORIGIN
/// expanded, then `extra`.
std::vector<std::filesystem::path> library_search_dirs(const BinaryImage& img,
                                                       const std::vector<std::filesystem::path>& extra);

}  // namespace sysid
