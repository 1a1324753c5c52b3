#include "sysid/syscall_id.hpp"

#include <deque>

#include "sysid/parallel.hpp"

namespace sysid {

Query ParamLocation::at_entry() const {
  return kind == Kind::Register ? Query::reg_query(reg) : Query::stack_query(offset);
}

Query ParamLocation::at_call() const {
  // Before the call pushes the return address, entry offset 8 is rsp+0.
  return kind == Kind::Register ? Query::reg_query(reg) : Query::stack_query(offset - 8);
}

std::string to_string(const ParamLocation& p) {
  if (p.kind == ParamLocation::Kind::Register) return std::string(gpr_name(p.reg));
  return "stack+" + std::to_string(p.offset);
}

std::optional<ParamLocation> parse_param_location(std::string_view s) {
  constexpr std::string_view kStack = "stack+";
  if (s.starts_with(kStack)) {
    try {
      return ParamLocation::on_stack(std::stoll(std::string(s.substr(kStack.size()))));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (auto g = gpr_from_name(s)) return ParamLocation::in_register(*g);
  return std::nullopt;
}

std::string_view to_string(WrapperEvidence e) {
  switch (e) {
    case WrapperEvidence::UdchainOnlyNegative: return "udchain-only-negative";
    case WrapperEvidence::SymbolicNegative: return "symbolic-negative";
    case WrapperEvidence::SymbolicConfirmed: return "symbolic-confirmed";
  }
  return "?";
}

namespace {

// Index of the first op belonging to instruction `insn` in its block.
std::size_t first_op_of(const LiftedBlock& b, Addr insn) {
  for (std::size_t i = 0; i < b.ops.size(); ++i) {
    if (b.ops[i].insn == insn) return i;
  }
  return b.ops.size();
}

bool writes(const MicroOp& op, Gpr g) {
  switch (op.kind) {
    case OpKind::WriteRegConst:
    case OpKind::CopyRegReg:
    case OpKind::LoadEffectiveAddress:
    case OpKind::LoadStack:
    case OpKind::LoadUnknown:
    case OpKind::ArithImm:
    case OpKind::HavocReg:
    case OpKind::Pop:
      return op.dst.reg == g;
    case OpKind::Syscall:
      return g == Gpr::Rax || g == Gpr::Rcx || g == Gpr::R11;
    default:
      return false;
  }
}

// Outcome of scanning ops [0, end) of a block backward for the definition
// of `reg`: the register to keep chasing, or a verdict.
enum class Scan { Defined, Undetermined, Continue };

Scan scan_back(const LiftedBlock& b, std::size_t end, Gpr& reg) {
  for (std::size_t i = end; i-- > 0;) {
    const MicroOp& op = b.ops[i];
    if (!writes(op, reg)) continue;
    bool full = write_replaces_parent(op.dst.width);
    switch (op.kind) {
      case OpKind::WriteRegConst:
        if (!full) return Scan::Undetermined;
        return Scan::Defined;
      case OpKind::LoadEffectiveAddress:
        return op.stack_address || !full ? Scan::Undetermined : Scan::Defined;
      case OpKind::CopyRegReg:
        if (!full) return Scan::Undetermined;
        reg = op.src.reg;
        break;
      case OpKind::ArithImm:
        break;  // still depends on the same register
      default:
        return Scan::Undetermined;  // memory, havoc, syscall result
    }
  }
  return Scan::Continue;
}

// Blocks of `func` that reach `block` without leaving the function.
std::set<Addr> backward_within(const Cfg& cfg, const FuncInfo& func, Addr block) {
  std::set<Addr> out{block};
  std::vector<Addr> work{block};
  while (!work.empty()) {
    Addr b = work.back();
    work.pop_back();
    if (b == func.entry) continue;
    for (const auto& e : cfg.in_edges(b)) {
      if (e.kind == EdgeKind::ReturnTo || e.kind == EdgeKind::Call) continue;
      if (func.blocks.count(e.src) && out.insert(e.src).second) work.push_back(e.src);
    }
  }
  return out;
}

// Backward closure of `block` over every edge but ReturnTo.
std::set<Addr> backward_closure(const Cfg& cfg, Addr block, const std::set<Addr>* within) {
  std::set<Addr> out{block};
  std::vector<Addr> work{block};
  while (!work.empty()) {
    Addr b = work.back();
    work.pop_back();
    for (const auto& e : cfg.in_edges(b)) {
      if (e.kind == EdgeKind::ReturnTo) continue;
      if (within && !within->count(e.src)) continue;
      if (out.insert(e.src).second) work.push_back(e.src);
    }
  }
  return out;
}

std::optional<Addr> function_entry_of(const Cfg& cfg, Addr block) {
  if (const FuncInfo* f = cfg.function_of(block)) return f->entry;
  return std::nullopt;
}

}  // namespace

bool rax_defined_locally(const Cfg& cfg, const FuncInfo& func, Addr site) {
  const LiftedBlock* start = cfg.block_containing(site);
  if (!start) return false;
  struct Item {
    Addr block;
    std::size_t end;
    Gpr reg;
  };
  std::vector<Item> work{{start->start, first_op_of(*start, site), Gpr::Rax}};
  std::set<std::pair<Addr, Gpr>> seen;
  while (!work.empty()) {
    Item it = work.back();
    work.pop_back();
    const LiftedBlock& b = cfg.blocks.at(it.block);
    Gpr reg = it.reg;
    switch (scan_back(b, it.end, reg)) {
      case Scan::Defined: continue;
      case Scan::Undetermined: return false;
      case Scan::Continue: break;
    }
    if (it.block == func.entry) return false;  // flows in from the caller
    bool any = false;
    for (const auto& e : cfg.in_edges(it.block)) {
      if (e.kind == EdgeKind::ReturnTo || e.kind == EdgeKind::Call) continue;
      if (!func.blocks.count(e.src)) return false;
      const LiftedBlock& p = cfg.blocks.at(e.src);
      if (p.is_call() && e.kind == EdgeKind::Fallthrough && is_caller_saved(reg)) return false;
      any = true;
      if (seen.insert({e.src, reg}).second) work.push_back({e.src, p.ops.size(), reg});
    }
    if (!any) return false;
  }
  return true;
}

WrapperDecision detect_wrapper(const Cfg& cfg, const FuncInfo& func, Addr site,
                               const IdentifyOptions& opts) {
  WrapperDecision d;
  if (rax_defined_locally(cfg, func, site)) {
    d.evidence = WrapperEvidence::UdchainOnlyNegative;
    return d;
  }
  d.evidence = WrapperEvidence::SymbolicNegative;
  const LiftedBlock* b = cfg.block_containing(site);
  if (!b) return d;
  auto allowed = backward_within(cfg, func, b->start);
  ExecOptions exec = opts.exec;
  exec.fresh_symbols = true;
  auto r = run_directed(cfg, func.entry, site, allowed, Query::reg_query(Gpr::Rax), opts.budget, exec);
  if (r.status != DirectedResult::Status::StillSymbolic || r.paths_completed == 0) return d;

  std::set<SymbolId> entry;
  bool anonymous = false;
  for (const auto& s : r.symbols) {
    if (s.is_entry()) {
      entry.insert(s);
    } else {
      anonymous = true;
    }
  }
  if (entry.empty()) return d;  // rax comes from untracked memory, not a parameter
  if (entry.size() > 1 || anonymous) {
    d.kind = WrapperDecision::Kind::Ambiguous;
    return d;
  }
  const SymbolId& s = *entry.begin();
  WrapperInfo w;
  w.function = func.entry;
  w.confirmed_by = WrapperEvidence::SymbolicConfirmed;
  if (s.kind == SymbolId::Kind::EntryRegister) {
    if (s.reg == Gpr::Rsp) return d;
    w.param_location = ParamLocation::in_register(s.reg);
  } else {
    if (s.offset <= 0) return d;  // the return address is not a parameter
    w.param_location = ParamLocation::on_stack(s.offset);
  }
  w.constants.insert(r.values.begin(), r.values.end());
  d.kind = WrapperDecision::Kind::Wrapper;
  d.evidence = WrapperEvidence::SymbolicConfirmed;
  d.wrapper = std::move(w);
  return d;
}

SearchResult backward_search(const Cfg& cfg, Addr target, const Query& query,
                             const IdentifyOptions& opts, const std::set<Addr>* callers_within,
                             bool root_supplies_param) {
  SearchResult out;
  const LiftedBlock* tb = cfg.block_containing(target);
  if (!tb) {
    out.unresolved = "no-block";
    return out;
  }
  const Addr start = tb->start;
  const auto allowed = backward_closure(cfg, start, callers_within);
  const std::set<Addr> roots(cfg.entry_nodes.begin(), cfg.entry_nodes.end());

  std::deque<std::pair<Addr, std::size_t>> queue{{start, 0}};
  std::set<Addr> queued{start};
  while (!queue.empty()) {
    auto [p, depth] = queue.front();
    queue.pop_front();
    auto r = run_directed(cfg, p, target, allowed, query, opts.budget, opts.exec);
    out.paths += r.paths_completed;
    if (r.status == DirectedResult::Status::BudgetExhausted) {
      out.unresolved = "budget-exhausted";
      return out;
    }
    if (r.resolved()) {
      auto& mine = out.by_function[function_entry_of(cfg, p).value_or(p)];
      for (auto v : r.values) {
        if (v > opts.max_syscall_number) {
          out.diagnostics.push_back({Diagnostic::Severity::Warning, "number-out-of-range", target,
                                     "ignoring constant " + std::to_string(v) + " reaching the site"});
          continue;
        }
        out.numbers.insert(v);
        mine.insert(v);
      }
      continue;
    }
    if (roots.count(p)) {
      if (!root_supplies_param || p != start) {
        out.unresolved = "still-symbolic";
        return out;
      }
      out.reached_param_root = true;  // callers inside the library still count
    }
    auto fp = function_entry_of(cfg, p);
    bool any = false;
    for (const auto& e : cfg.in_edges(p)) {
      if (e.kind == EdgeKind::ReturnTo || !allowed.count(e.src)) continue;
      any = true;
      if (!queued.insert(e.src).second) continue;
      std::size_t d = depth + (function_entry_of(cfg, e.src) != fp ? 1 : 0);
      if (d > opts.max_call_depth) {
        out.unresolved = "call-depth";
        return out;
      }
      queue.emplace_back(e.src, d);
    }
    if (!any) {
      out.diagnostics.push_back({Diagnostic::Severity::Info, "dead-end", p,
                                 "backward search found no predecessor"});
    }
  }
  return out;
}

SyscallSite identify_site(const Cfg& cfg, Addr site, const std::optional<WrapperInfo>& wrapper,
                          const IdentifyOptions& opts) {
  SyscallSite s;
  s.address = site;
  const LiftedBlock* b = cfg.block_containing(site);
  s.function = b ? function_entry_of(cfg, b->start).value_or(b->start) : site;
  s.in_wrapper = wrapper.has_value();

  SearchResult r;
  if (wrapper) {
    const bool library = cfg.image && cfg.image->kind == BinaryKind::SharedObject;
    auto reachable = cfg.reachable_from_entries();
    r = backward_search(cfg, wrapper->function, wrapper->param_location.at_entry(), opts, &reachable,
                        library);
    s.param_from_caller = r.reached_param_root;
    // A start still-symbolic at the wrapper entry contributes nothing itself.
    r.by_function.erase(wrapper->function);
    if (!wrapper->constants.empty()) {
      for (auto v : wrapper->constants) {
        if (v > opts.max_syscall_number) continue;
        r.numbers.insert(v);
        r.by_function[wrapper->function].insert(v);
      }
    }
  } else {
    r = backward_search(cfg, site, Query::reg_query(Gpr::Rax), opts);
  }
  s.paths_explored = r.paths;
  std::erase_if(r.by_function, [](const auto& kv) { return kv.second.empty(); });
  if (r.unresolved) {
    s.unresolved = r.unresolved;
  } else if (r.numbers.empty() && !s.param_from_caller) {
    s.unresolved = "no-defining-path";
  } else {
    s.numbers = std::move(r.numbers);
    s.by_function = std::move(r.by_function);
  }
  return s;
}

ProgramIdentification identify_program(const Cfg& cfg, const IdentifyOptions& opts) {
  ProgramIdentification out;
  const auto reachable = cfg.reachable_from_entries();
  std::vector<Addr> sites;
  for (Addr b : reachable) {
    const LiftedBlock& blk = cfg.blocks.at(b);
    for (Addr s : blk.syscall_sites()) sites.push_back(s);
    for (Addr s : blk.legacy_syscalls) {
      out.diagnostics.push_back({Diagnostic::Severity::Info, "legacy-syscall", s,
                                 "sysenter/int 0x80 is reported but not analyzed"});
    }
  }
  std::set<Addr> poisoned;
  for (Addr b : reachable) {
    const FuncInfo* f = cfg.function_of(b);
    if (f && f->poisoned) poisoned.insert(f->entry);
  }
  for (Addr f : poisoned) {
    out.poisoned_functions.push_back(f);
    out.diagnostics.push_back({Diagnostic::Severity::Warning, "poisoned-function", f,
                               "reachable function failed to decode; its syscalls are unknown"});
  }

  std::vector<SyscallSite> results(sites.size());
  std::vector<WrapperDecision> decisions(sites.size());
  parallel_for(sites.size(), opts.jobs, [&](std::size_t i) {
    Addr site = sites[i];
    const LiftedBlock* b = cfg.block_containing(site);
    const FuncInfo* f = cfg.function_of(b->start);
    if (opts.wrapper_heuristic && f) decisions[i] = detect_wrapper(cfg, *f, site, opts);
    if (decisions[i].kind == WrapperDecision::Kind::Ambiguous) {
      results[i].address = site;
      results[i].function = f ? f->entry : b->start;
      results[i].in_wrapper = true;
      results[i].unresolved = "ambiguous-param";
      return;
    }
    results[i] = identify_site(cfg, site, decisions[i].wrapper, opts);
  });

  for (std::size_t i = 0; i < sites.size(); ++i) {
    const SyscallSite& s = results[i];
    if (decisions[i].wrapper) out.wrappers[decisions[i].wrapper->function] = *decisions[i].wrapper;
    if (s.resolved()) {
      out.syscalls.insert(s.numbers.begin(), s.numbers.end());
    } else {
      out.unresolved_sites.push_back(s.address);
      out.diagnostics.push_back({Diagnostic::Severity::Warning, "unresolved-site", s.address,
                                 "syscall number not determined: " + *s.unresolved});
    }
    out.sites.emplace(s.address, s);
  }
  out.complete = out.unresolved_sites.empty() && out.poisoned_functions.empty();
  return out;
}

}  // namespace sysid
