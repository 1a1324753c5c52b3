#include "sysid/cfg.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

#include "sysid/error.hpp"

namespace sysid {
namespace {

const std::vector<Edge> kNoEdges;

bool is_intraprocedural(EdgeKind k) {
  return k == EdgeKind::Fallthrough || k == EdgeKind::Jump || k == EdgeKind::BranchTaken;
}

LiftedBlock unknown_effects_block(Addr a) {
  LiftedBlock b;
  b.start = a;
  b.byte_len = 1;
  MicroOp op;
  op.kind = OpKind::Nop;
  op.insn = a;
  b.ops.push_back(op);
  b.terminator = Terminator::Halt;
  b.unknown_effects = true;
  return b;
}

class CfgBuilder {
 public:
  explicit CfgBuilder(Cfg& cfg) : cfg_(cfg), img_(*cfg.image) {
    for (const auto& [a, b] : cfg_.blocks) leaders_.insert(a);
  }

  // Seeds: analysis roots plus every function start the binary describes.
  void seed() {
    std::set<Addr> starts;
    for (Addr a : list_entry_points(img_)) cfg_.entry_nodes.push_back(a);
    if (cfg_.options.init_functions_as_roots) {
      for (Addr a : img_.init_functions) cfg_.entry_nodes.push_back(a);
    }
    for (Addr a : cfg_.options.extra_roots) {
      if (img_.in_code(a)) cfg_.entry_nodes.push_back(a);
    }
    std::sort(cfg_.entry_nodes.begin(), cfg_.entry_nodes.end());
    cfg_.entry_nodes.erase(std::unique(cfg_.entry_nodes.begin(), cfg_.entry_nodes.end()),
                           cfg_.entry_nodes.end());
    for (Addr a : cfg_.entry_nodes) starts.insert(a);
    for (const auto& s : img_.symbols) {
      if (s.is_function && img_.in_code(s.address)) starts.insert(s.address);
    }
    for (const auto& r : img_.unwind_ranges) starts.insert(r.start);
    for (const auto& [name, a] : img_.plt_map) {
      starts.insert(a);
      cfg_.plt_blocks[a] = name;
    }
    discover({starts.begin(), starts.end()});
  }

  void discover(std::vector<Addr> work) {
    while (!work.empty()) {
      Addr a = work.back();
      work.pop_back();
      if (!img_.in_code(a) || cfg_.blocks.count(a)) continue;
      split_at(a);
      leaders_.insert(a);
      LiftedBlock b;
      try {
        b = lifter_.lift_block(img_, a, &leaders_);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DecodeFailure) throw;
        cfg_.diagnostics.push_back(
            {Diagnostic::Severity::Warning, "decode-failure", a, e.what()});
        b = unknown_effects_block(a);
      }
      for (Addr t : successors_for_discovery(b)) work.push_back(t);
      cfg_.blocks.emplace(a, std::move(b));
    }
  }

  // Installs every edge implied by the blocks and current indirect targets,
  // then recomputes the function partition and return edges.
  void install_edges() {
    std::set<Edge> edges;
    auto add = [&](Addr s, Addr d, EdgeKind k) {
      if (cfg_.blocks.count(d)) edges.insert({s, d, k});
    };
    cfg_.unresolved_indirects.clear();
    cfg_.got_call_blocks.clear();
    for (const auto& [a, b] : cfg_.blocks) {
      auto target = b.direct_target();
      switch (b.terminator) {
        case Terminator::Fallthrough:
        case Terminator::SyscallContinuing:
          add(a, b.end(), EdgeKind::Fallthrough);
          break;
        case Terminator::Branch:
          if (target) add(a, *target, EdgeKind::BranchTaken);
          add(a, b.end(), EdgeKind::Fallthrough);
          break;
        case Terminator::JumpDirect:
          if (target) add(a, *target, EdgeKind::Jump);
          break;
        case Terminator::CallDirect:
          if (target) add(a, *target, EdgeKind::Call);
          add(a, b.end(), EdgeKind::Fallthrough);
          break;
        case Terminator::CallIndirect:
        case Terminator::JumpIndirect: {
          bool call = b.terminator == Terminator::CallIndirect;
          if (call) add(a, b.end(), EdgeKind::Fallthrough);
          if (auto local = plt_local_binding(a)) {
            add(a, *local, EdgeKind::Jump);
            break;
          }
          if (cfg_.plt_blocks.count(a)) break;
          if (auto imp = got_import(b)) {
            cfg_.got_call_blocks[a] = *imp;
            if (auto local = local_definition(*imp)) {
              add(a, *local, call ? EdgeKind::Call : EdgeKind::Jump);
            }
            break;
          }
          cfg_.unresolved_indirects.insert(a);
          if (auto jt = cfg_.jump_table_targets.find(a); jt != cfg_.jump_table_targets.end()) {
            for (Addr t : jt->second) add(a, t, EdgeKind::Jump);
          }
          if (auto it = cfg_.indirect_targets.find(a); it != cfg_.indirect_targets.end()) {
            for (Addr t : it->second) add(a, t, EdgeKind::IndirectResolved);
          }
          break;
        }
        case Terminator::Return:
        case Terminator::Halt:
          break;
      }
    }
    cfg_.edges.assign(edges.begin(), edges.end());
    cfg_.reindex();
    partition();
    add_return_edges(edges);
    cfg_.edges.assign(edges.begin(), edges.end());
    cfg_.reindex();
  }

 private:
  // Splits the block holding `a` mid-way so that `a` becomes a leader.
  void split_at(Addr a) {
    auto it = cfg_.blocks.upper_bound(a);
    if (it == cfg_.blocks.begin()) return;
    --it;
    LiftedBlock& host = it->second;
    if (!host.contains(a) || host.unknown_effects) return;
    bool boundary = std::any_of(host.instructions.begin(), host.instructions.end(),
                                [a](const Instruction& i) { return i.address == a; });
    if (!boundary) {
      cfg_.diagnostics.push_back({Diagnostic::Severity::Warning, "overlapping-code", a,
                                  "jump into the middle of an instruction in block " +
                                      hex(host.start)});
      return;
    }
    leaders_.insert(a);
    host = lifter_.lift_block(img_, host.start, &leaders_);
  }

  std::vector<Addr> successors_for_discovery(const LiftedBlock& b) {
    std::vector<Addr> out;
    if (b.unknown_effects) return out;
    if (auto t = b.direct_target()) out.push_back(*t);
    if (b.has_fallthrough()) out.push_back(b.end());
    if (b.terminator == Terminator::JumpIndirect) {
      if (auto local = plt_local_binding(b.start)) {
        out.push_back(*local);
      } else if (!cfg_.plt_blocks.count(b.start) && !got_import(b)) {
        auto targets = jump_table(b);
        if (!targets.empty()) {
          cfg_.jump_table_targets[b.start] = targets;
          out.insert(out.end(), targets.begin(), targets.end());
        }
      }
    }
    if (b.terminator == Terminator::CallIndirect || b.terminator == Terminator::JumpIndirect) {
      if (auto imp = got_import(b)) {
        if (auto local = local_definition(*imp)) out.push_back(*local);
      }
    }
    return out;
  }

  std::optional<std::string> got_import(const LiftedBlock& b) const {
    const auto& last = b.ops.back();
    if (!last.mem_target) return std::nullopt;
    auto it = img_.got_imports.find(*last.mem_target);
    if (it == img_.got_imports.end()) return std::nullopt;
    return it->second;
  }

  // A symbol the object both imports through its PLT and defines itself
  // (e.g. an exported function called via its own PLT). Interposition is
  // not modeled, so the call binds to the local definition.
  std::optional<Addr> local_definition(const std::string& name) const {
    auto it = img_.exported.find(name);
    if (it == img_.exported.end()) return std::nullopt;
    return it->second;
  }

  std::optional<Addr> plt_local_binding(Addr block) const {
    auto it = cfg_.plt_blocks.find(block);
    if (it == cfg_.plt_blocks.end()) return std::nullopt;
    return local_definition(it->second);
  }

  // Bounds of the function holding `a`: the tightest symbol or unwind range,
  // else the whole code range.
  CodeRange function_bounds(Addr a) const {
    std::optional<CodeRange> best;
    auto consider = [&](Addr start, std::uint64_t size) {
      if (size == 0 || a < start || a >= start + size) return;
      if (!best || size < best->size) best = CodeRange{start, size};
    };
    for (const auto& s : img_.symbols) {
      if (s.is_function) consider(s.address, s.size);
    }
    for (const auto& r : img_.unwind_ranges) consider(r.start, r.size);
    if (best) return *best;
    if (const auto* r = img_.code_range_of(a)) return *r;
    return {a, 1};
  }

  // Recognizes `jmp *table(,%idx,8)` (absolute entries) and
  // `lea table(%rip),%b; movslq (%b,%idx,4),%r; add %b,%r; jmp *%r`
  // (table-relative 32-bit entries). Entries are read until one leaves the
  // enclosing function.
  std::set<Addr> jump_table(const LiftedBlock& b) const {
    std::set<Addr> out;
    const Instruction& jmp = b.instructions.back();
    if (jmp.operands.size() != 1) return out;
    CodeRange fn = function_bounds(b.start);
    const std::size_t limit = cfg_.options.max_jump_table_entries;
    const Operand& target = jmp.operands[0];

    if (target.kind == Operand::Kind::Mem && target.mem.index && !target.mem.base &&
        !target.mem.rip_relative && target.mem.scale == 8) {
      Addr table = static_cast<Addr>(target.mem.disp);
      for (std::size_t i = 0; i < limit; ++i) {
        auto v = img_.read_u64(table + 8 * i);
        if (!v || !fn.contains(*v)) break;
        out.insert(*v);
      }
      return out;
    }

    if (target.kind != Operand::Kind::Reg || target.reg.width != Width::W64) return out;
    std::optional<Addr> table;
    std::optional<Gpr> base;
    for (auto it = b.instructions.rbegin() + 1; it != b.instructions.rend(); ++it) {
      const Instruction& in = *it;
      if (!base && in.mnemonic == Mnemonic::Movsxd && in.operands.size() == 2 &&
          in.operands[1].kind == Operand::Kind::Mem && in.operands[1].mem.base &&
          in.operands[1].mem.scale == 4) {
        base = *in.operands[1].mem.base;
      } else if (base && in.mnemonic == Mnemonic::Lea && in.operands.size() == 2 &&
                 in.operands[0].kind == Operand::Kind::Reg && in.operands[0].reg.reg == *base &&
                 in.operands[1].kind == Operand::Kind::Mem && in.operands[1].mem.absolute) {
        table = *in.operands[1].mem.absolute;
        break;
      }
    }
    if (!table) return out;
    for (std::size_t i = 0; i < limit; ++i) {
      auto rel = img_.read_i32(*table + 4 * i);
      if (!rel) break;
      Addr t = *table + static_cast<std::int64_t>(*rel);
      if (!fn.contains(t)) break;
      out.insert(t);
    }
    return out;
  }

  void partition() {
    std::set<Addr> entries;
    for (Addr a : cfg_.entry_nodes) entries.insert(a);
    for (const auto& s : img_.symbols) {
      if (s.is_function) entries.insert(s.address);
    }
    for (const auto& r : img_.unwind_ranges) entries.insert(r.start);
    for (const auto& [a, name] : cfg_.plt_blocks) entries.insert(a);
    for (const auto& e : cfg_.edges) {
      if (e.kind == EdgeKind::Call || e.kind == EdgeKind::IndirectResolved) entries.insert(e.dst);
    }
    for (const auto& [a, name] : cfg_.got_call_blocks) {
      if (auto local = local_definition(name)) entries.insert(*local);
    }
    std::erase_if(entries, [&](Addr a) { return !cfg_.blocks.count(a); });

    std::map<Addr, Addr> owner;
    // Sized ranges first: they are exact when present.
    std::vector<CodeRange> ranges;
    for (const auto& s : img_.symbols) {
      if (s.is_function && s.size > 0) ranges.push_back({s.address, s.size});
    }
    for (const auto& r : img_.unwind_ranges) ranges.push_back(r);
    std::sort(ranges.begin(), ranges.end(), [](const CodeRange& x, const CodeRange& y) {
      return std::tie(x.size, x.start) < std::tie(y.size, y.start);
    });
    for (const auto& r : ranges) {
      if (!entries.count(r.start)) continue;
      for (auto it = cfg_.blocks.lower_bound(r.start); it != cfg_.blocks.end() && it->first < r.end();
           ++it) {
        if (it->first != r.start && entries.count(it->first)) continue;
        owner.emplace(it->first, r.start);
      }
    }
    for (Addr e : entries) {
      if (auto it = owner.find(e); it != owner.end() && it->second != e) continue;
      owner[e] = e;
      std::set<Addr> seen{e};
      std::vector<Addr> work{e};
      while (!work.empty()) {
        Addr b = work.back();
        work.pop_back();
        for (const auto& edge : cfg_.out_edges(b)) {
          Addr d = edge.dst;
          if (!is_intraprocedural(edge.kind) || entries.count(d) || !seen.insert(d).second) continue;
          auto [it, fresh] = owner.emplace(d, e);
          if (!fresh && it->second != e) continue;
          work.push_back(d);
        }
      }
    }
    for (const auto& [a, blk] : cfg_.blocks) owner.emplace(a, a);  // orphans

    std::map<Addr, FuncInfo> funcs;
    for (const auto& [b, e] : owner) {
      auto& f = funcs[e];
      f.entry = e;
      f.blocks.insert(b);
    }
    std::map<Addr, std::string> names;
    for (const auto& s : img_.symbols) {
      if (!s.is_function) continue;
      auto it = names.find(s.address);
      // Prefer exported names, then the lexicographically first.
      if (it == names.end() || (s.is_exported && !exported_name(it->second)) ||
          (s.is_exported == exported_name(it->second) && s.name < it->second)) {
        names[s.address] = s.name;
      }
    }
    for (const auto& [a, name] : cfg_.plt_blocks) names[a] = name + "@plt";
    cfg_.functions.clear();
    cfg_.block_function.clear();
    for (auto& [e, f] : funcs) {
      if (auto it = names.find(e); it != names.end()) f.name = it->second;
      for (Addr b : f.blocks) {
        const auto& blk = cfg_.blocks.at(b);
        if (blk.unknown_effects) f.poisoned = true;
        for (Addr s : blk.syscall_sites()) f.contains_syscall_sites.push_back(s);
        cfg_.block_function[b] = e;
      }
      std::sort(f.contains_syscall_sites.begin(), f.contains_syscall_sites.end());
      cfg_.functions.push_back(std::move(f));
    }
  }

  bool exported_name(const std::string& name) const { return img_.exported.count(name) > 0; }

  // Return blocks of each function, including those of functions it
  // tail-jumps to (they return to our callers).
  std::map<Addr, std::set<Addr>> return_blocks() const {
    std::map<Addr, std::set<Addr>> rets;
    std::map<Addr, std::set<Addr>> tails;
    for (const auto& f : cfg_.functions) {
      auto& r = rets[f.entry];
      for (Addr b : f.blocks) {
        const auto& blk = cfg_.blocks.at(b);
        if (blk.terminator == Terminator::Return) r.insert(b);
        if (blk.terminator != Terminator::JumpDirect && blk.terminator != Terminator::JumpIndirect) {
          continue;
        }
        for (const auto& e : cfg_.out_edges(b)) {
          if (cfg_.block_function.at(e.dst) != f.entry && cfg_.function_at(e.dst)) {
            tails[f.entry].insert(e.dst);
          }
        }
      }
    }
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& [f, targets] : tails) {
        auto& mine = rets[f];
        for (Addr g : targets) {
          for (Addr r : rets[g]) changed |= mine.insert(r).second;
        }
      }
    }
    return rets;
  }

  void add_return_edges(std::set<Edge>& edges) {
    auto rets = return_blocks();
    for (const auto& [a, blk] : cfg_.blocks) {
      if (!blk.is_call() || !cfg_.blocks.count(blk.end())) continue;
      for (const auto& e : cfg_.out_edges(a)) {
        if (e.kind != EdgeKind::Call && e.kind != EdgeKind::IndirectResolved) continue;
        auto it = rets.find(e.dst);
        if (it == rets.end()) continue;
        for (Addr r : it->second) edges.insert({r, blk.end(), EdgeKind::ReturnTo});
      }
    }
  }

  Cfg& cfg_;
  const BinaryImage& img_;
  Lifter lifter_;
  std::set<Addr> leaders_;
};

}  // namespace

std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::Fallthrough: return "fallthrough";
    case EdgeKind::Jump: return "jump";
    case EdgeKind::BranchTaken: return "branch-taken";
    case EdgeKind::Call: return "call";
    case EdgeKind::ReturnTo: return "return-to";
    case EdgeKind::IndirectResolved: return "indirect-resolved";
  }
  return "?";
}

const LiftedBlock* Cfg::block(Addr start) const {
  auto it = blocks.find(start);
  return it == blocks.end() ? nullptr : &it->second;
}

const LiftedBlock* Cfg::block_containing(Addr a) const {
  auto it = blocks.upper_bound(a);
  if (it == blocks.begin()) return nullptr;
  --it;
  return it->second.contains(a) ? &it->second : nullptr;
}

const FuncInfo* Cfg::function_at(Addr entry) const {
  auto it = std::lower_bound(functions.begin(), functions.end(), entry,
                             [](const FuncInfo& f, Addr a) { return f.entry < a; });
  return it != functions.end() && it->entry == entry ? &*it : nullptr;
}

const FuncInfo* Cfg::function_of(Addr b) const {
  auto it = block_function.find(b);
  return it == block_function.end() ? nullptr : function_at(it->second);
}

const std::vector<Edge>& Cfg::out_edges(Addr b) const {
  auto it = succ.find(b);
  return it == succ.end() ? kNoEdges : it->second;
}

const std::vector<Edge>& Cfg::in_edges(Addr b) const {
  auto it = pred.find(b);
  return it == pred.end() ? kNoEdges : it->second;
}

std::set<Addr> Cfg::reachable(const std::vector<Addr>& roots) const {
  std::set<Addr> seen;
  std::vector<Addr> work;
  for (Addr r : roots) {
    if (blocks.count(r) && seen.insert(r).second) work.push_back(r);
  }
  while (!work.empty()) {
    Addr b = work.back();
    work.pop_back();
    for (const auto& e : out_edges(b)) {
      if (seen.insert(e.dst).second) work.push_back(e.dst);
    }
  }
  return seen;
}

std::vector<Addr> Cfg::call_sites_of(Addr entry) const {
  std::vector<Addr> out;
  for (const auto& e : in_edges(entry)) {
    if (e.kind == EdgeKind::Call ||
        (e.kind == EdgeKind::IndirectResolved && blocks.at(e.src).is_call())) {
      out.push_back(e.src);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<std::string> Cfg::import_of(Addr b) const {
  if (auto it = plt_blocks.find(b); it != plt_blocks.end()) return it->second;
  if (auto it = got_call_blocks.find(b); it != got_call_blocks.end()) return it->second;
  return std::nullopt;
}

bool Cfg::has_edge(Addr src, Addr dst, EdgeKind kind) const {
  return std::binary_search(edges.begin(), edges.end(), Edge{src, dst, kind});
}

void Cfg::reindex() {
  succ.clear();
  pred.clear();
  for (const auto& e : edges) {
    succ[e.src].push_back(e);
    pred[e.dst].push_back(e);
  }
}

bool Cfg::operator==(const Cfg& o) const {
  auto same_blocks = [&] {
    if (blocks.size() != o.blocks.size()) return false;
    for (auto a = blocks.begin(), b = o.blocks.begin(); a != blocks.end(); ++a, ++b) {
      if (a->first != b->first || a->second.byte_len != b->second.byte_len ||
          a->second.ops != b->second.ops || a->second.terminator != b->second.terminator) {
        return false;
      }
    }
    return true;
  };
  return same_blocks() && edges == o.edges && functions == o.functions &&
         entry_nodes == o.entry_nodes && active_addresses_taken == o.active_addresses_taken &&
         unresolved_indirects == o.unresolved_indirects;
}

Cfg build_base_cfg(std::shared_ptr<const BinaryImage> img, const CfgOptions& options) {
  Cfg cfg;
  cfg.image = std::move(img);
  cfg.options = options;
  CfgBuilder builder(cfg);
  builder.seed();
  builder.install_edges();
  return cfg;
}

Cfg resolve_active_addresses_taken(Cfg cfg) {
  CfgBuilder builder(cfg);
  for (;;) {
    std::set<Addr> active;
    for (Addr b : cfg.reachable_from_entries()) {
      for (Addr a : cfg.blocks.at(b).addresses_taken_here) active.insert(a);
    }
    // Edges are only ever added, so the active set only grows.
    assert(std::includes(active.begin(), active.end(), cfg.active_addresses_taken.begin(),
                         cfg.active_addresses_taken.end()));
    builder.discover({active.begin(), active.end()});
    std::erase_if(active, [&](Addr a) { return !cfg.blocks.count(a); });

    bool changed = active != cfg.active_addresses_taken;
    cfg.active_addresses_taken = active;
    // Newly lifted code can add unresolved blocks, so assign until stable.
    for (bool assigning = true; assigning;) {
      assigning = false;
      for (Addr u : cfg.unresolved_indirects) {
        auto& t = cfg.indirect_targets[u];
        if (t != active) {
          t = active;
          assigning = true;
        }
      }
      if (assigning || changed) builder.install_edges();
      changed |= assigning;
    }
    if (!changed) break;
  }
  return cfg;
}

Cfg build_cfg(std::shared_ptr<const BinaryImage> img, const CfgOptions& options) {
  return resolve_active_addresses_taken(build_base_cfg(std::move(img), options));
}

std::vector<Addr> reachable_syscall_sites(const Cfg& cfg) {
  std::vector<Addr> out;
  for (Addr b : cfg.reachable_from_entries()) {
    for (Addr s : cfg.blocks.at(b).syscall_sites()) out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string dump_edges(const Cfg& cfg) {
  std::ostringstream out;
  for (const auto& e : cfg.edges) {
    out << hex(e.src) << " -> " << hex(e.dst) << ' ' << to_string(e.kind) << '\n';
  }
  return out.str();
}

}  // namespace sysid
