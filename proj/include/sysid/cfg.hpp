#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sysid/elf_image.hpp"
#include "sysid/lifter.hpp"
#include "sysid/types.hpp"

namespace sysid {

enum class EdgeKind : std::uint8_t {
  Fallthrough,       // includes call block -> return site
  Jump,              // direct jump, and jump-table targets
  BranchTaken,
  Call,
  ReturnTo,          // callee return block -> caller's return site
  IndirectResolved,  // indirect call/jump -> active address taken
};

std::string_view to_string(EdgeKind k);

struct Edge {
  Addr src = 0;
  Addr dst = 0;
  EdgeKind kind = EdgeKind::Fallthrough;

  auto operator<=>(const Edge&) const = default;
};

struct FuncInfo {
  Addr entry = 0;
  std::set<Addr> blocks;
  std::optional<std::string> name;
  bool is_wrapper = false;
  bool poisoned = false;  // some block failed to decode
  std::vector<Addr> contains_syscall_sites;

  bool operator==(const FuncInfo&) const = default;
};

struct CfgOptions {
  // Treat DT_INIT / DT_INIT_ARRAY functions as extra roots: the loader and
  // libc start-up call them through data pointers no `lea` ever names.
  bool init_functions_as_roots = true;
  std::size_t max_jump_table_entries = 512;
  // Additional analysis roots, e.g. callbacks another module may invoke.
  std::vector<Addr> extra_roots;
};

/// Over-approximated control-flow graph of one binary.
struct Cfg {
  std::shared_ptr<const BinaryImage> image;
  std::map<Addr, LiftedBlock> blocks;
  std::vector<Edge> edges;  // sorted, unique
  std::vector<FuncInfo> functions;  // sorted by entry
  std::vector<Addr> entry_nodes;
  std::set<Addr> active_addresses_taken;
  std::set<Addr> unresolved_indirects;
  // PLT stub block -> imported symbol it jumps to.
  std::map<Addr, std::string> plt_blocks;
  // Blocks ending in `call *GOT(%rip)` / `jmp *GOT(%rip)` -> imported symbol.
  std::map<Addr, std::string> got_call_blocks;
  // Indirect jump block -> in-function targets recovered from a jump table.
  std::map<Addr, std::set<Addr>> jump_table_targets;
  // Indirect call/jump block -> currently assigned targets (active ATs).
  std::map<Addr, std::set<Addr>> indirect_targets;
  Diagnostics diagnostics;
  CfgOptions options;

  // Derived indexes, rebuilt by reindex().
  std::map<Addr, std::vector<Edge>> succ;
  std::map<Addr, std::vector<Edge>> pred;
  std::map<Addr, Addr> block_function;  // block -> function entry

  const LiftedBlock* block(Addr start) const;
  /// The block whose byte range holds `a` (instruction-level lookup).
  const LiftedBlock* block_containing(Addr a) const;
  const FuncInfo* function_at(Addr entry) const;
  const FuncInfo* function_of(Addr block) const;

  const std::vector<Edge>& out_edges(Addr b) const;
  const std::vector<Edge>& in_edges(Addr b) const;

  /// Forward closure over every edge kind.
  std::set<Addr> reachable(const std::vector<Addr>& roots) const;
  std::set<Addr> reachable_from_entries() const { return reachable(entry_nodes); }

  /// Blocks whose call edge (direct or resolved) targets `entry`.
  std::vector<Addr> call_sites_of(Addr entry) const;
  /// Imported symbol invoked by block `b` (PLT stub, or GOT-indirect call).
  std::optional<std::string> import_of(Addr b) const;

  bool has_edge(Addr src, Addr dst, EdgeKind kind) const;
  void reindex();

  bool operator==(const Cfg& other) const;
};

/// Lifts every block reachable by direct flow from the entry points and from
/// every known function start, installs direct edges and records indirect
/// call/jump blocks as unresolved.
Cfg build_base_cfg(std::shared_ptr<const BinaryImage> img, const CfgOptions& options = {});

/// Active-addresses-taken fixpoint: repeatedly links every unresolved
/// indirect block to every code address taken by a reachable block.
Cfg resolve_active_addresses_taken(Cfg cfg);

/// build_base_cfg followed by the fixpoint.
Cfg build_cfg(std::shared_ptr<const BinaryImage> img, const CfgOptions& options = {});

/// Syscall instruction addresses in blocks reachable from the entry nodes.
std::vector<Addr> reachable_syscall_sites(const Cfg& cfg);

/// Text edge list: "<src> -> <dst> <kind>", one per line, sorted.
std::string dump_edges(const Cfg& cfg);

}  // namespace sysid
