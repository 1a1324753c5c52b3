#include "sysid/symexec.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace sysid {
namespace {

constexpr std::size_t kRsp = static_cast<std::size_t>(Gpr::Rsp);
constexpr std::size_t kRbp = static_cast<std::size_t>(Gpr::Rbp);
constexpr std::int64_t kMaxSlotSize = 64;

std::uint64_t size_mask(unsigned bytes) {
  return bytes >= 8 ? ~std::uint64_t{0} : (std::uint64_t{1} << (bytes * 8)) - 1;
}

std::uint64_t sign_extend(std::uint64_t v, unsigned bits) {
  if (bits >= 64) return v;
  std::uint64_t sign = std::uint64_t{1} << (bits - 1);
  v &= (sign << 1) - 1;
  return (v ^ sign) - sign;
}

void write_reg(SymState& s, RegRef dst, const SymValue& v, std::size_t max_values) {
  auto idx = static_cast<std::size_t>(dst.reg);
  SymValue& slot = s.regs[idx];
  if (write_replaces_parent(dst.width)) {
    if (v.is_const()) {
      slot = v.map([w = dst.width](std::uint64_t x) { return apply_write(0, x, w); });
    } else {
      slot = v;  // a 32-bit view of a symbol keeps its identity
    }
  } else if (slot.is_const() && v.is_const() &&
             slot.values().size() * v.values().size() <= max_values) {
    SymValue::Set out;
    for (auto o : slot.values()) {
      for (auto x : v.values()) out.insert(apply_write(o, x, dst.width));
    }
    slot = SymValue::consts(std::move(out));
  } else {
    slot = SymValue::unknown();
  }
  s.alias[idx].reset();
}

std::optional<StackAddr> resolve(const SymState& s, const StackRef& ref) {
  const auto& base = s.alias[ref.base == StackBase::Rsp ? kRsp : kRbp];
  if (!base) return std::nullopt;
  return StackAddr{base->epoch, base->offset + ref.disp};
}

bool overlaps(std::int64_t a, unsigned asize, std::int64_t b, unsigned bsize) {
  return a < b + static_cast<std::int64_t>(bsize) && b < a + static_cast<std::int64_t>(asize);
}

void forget_stack(SymState& s) {
  s.stack.clear();
  s.stack_havocked = true;
}

void store(SymState& s, StackAddr addr, unsigned size, SymValue value,
           std::optional<StackAddr> alias) {
  auto it = s.stack.lower_bound({addr.epoch, addr.offset - kMaxSlotSize});
  while (it != s.stack.end() && it->first.epoch == addr.epoch &&
         it->first.offset < addr.offset + static_cast<std::int64_t>(size)) {
    if (overlaps(it->first.offset, it->second.size, addr.offset, size)) {
      it = s.stack.erase(it);
    } else {
      ++it;
    }
  }
  if (value.is_const()) {
    value = value.map([m = size_mask(size)](std::uint64_t x) { return x & m; });
  }
  s.stack[addr] = StackSlot{std::move(value), size == 8 ? alias : std::nullopt, size};
}

const StackSlot* exact_slot(const SymState& s, StackAddr addr) {
  auto it = s.stack.find(addr);
  return it == s.stack.end() ? nullptr : &it->second;
}

bool any_overlap(const SymState& s, StackAddr addr, unsigned size) {
  auto it = s.stack.lower_bound({addr.epoch, addr.offset - kMaxSlotSize});
  for (; it != s.stack.end() && it->first.epoch == addr.epoch &&
         it->first.offset < addr.offset + static_cast<std::int64_t>(size);
       ++it) {
    if (overlaps(it->first.offset, it->second.size, addr.offset, size)) return true;
  }
  return false;
}

SymValue default_slot_value(const SymState& s, StackAddr addr) {
  if (s.fresh && !s.stack_havocked && addr.epoch == 0 && addr.offset >= 0) {
    return SymValue::unknown(SymbolId::entry_stack(addr.offset));
  }
  return SymValue::unknown();
}

std::optional<StackAddr> load_alias(const SymState& s, StackAddr addr, unsigned size) {
  if (size != 8) return std::nullopt;
  const StackSlot* slot = exact_slot(s, addr);
  return slot ? slot->alias : std::nullopt;
}

SymValue source_value(const SymState& s, const MicroOp& op, std::optional<StackAddr>& alias) {
  alias.reset();
  switch (op.source) {
    case ValueSource::Reg:
      if (op.src.width == Width::W64) alias = s.alias[static_cast<std::size_t>(op.src.reg)];
      return read_reg(s, op.src);
    case ValueSource::Imm:
      return SymValue::constant(op.imm);
    case ValueSource::Unknown:
      break;
  }
  return SymValue::unknown();
}

std::uint64_t arith(ArithKind k, std::uint64_t a, std::uint64_t b) {
  switch (k) {
    case ArithKind::Add: return a + b;
    case ArithKind::Sub: return a - b;
    case ArithKind::And: return a & b;
    case ArithKind::Or: return a | b;
    case ArithKind::Xor: return a ^ b;
  }
  return a;
}

void apply_rsp_arith(SymState& s, const MicroOp& op) {
  auto& sp = s.alias[kRsp];
  s.regs[kRsp] = SymValue::unknown();
  if (!sp) return;
  if (op.dst.width != Width::W64) {
    sp.reset();
    return;
  }
  auto delta = static_cast<std::int64_t>(op.imm);
  switch (op.arith) {
    case ArithKind::Add: sp->offset += delta; break;
    case ArithKind::Sub: sp->offset -= delta; break;
    case ArithKind::And: sp = StackAddr{s.next_epoch++, 0}; break;  // realignment
    default: sp.reset(); break;
  }
}

}  // namespace

std::string to_string(const SymbolId& s) {
  switch (s.kind) {
    case SymbolId::Kind::Anonymous: return "?";
    case SymbolId::Kind::EntryRegister: return "entry(" + std::string(gpr_name(s.reg)) + ")";
    case SymbolId::Kind::EntryStack: return "entry([rsp+" + std::to_string(s.offset) + "])";
  }
  return "?";
}

SymValue SymValue::constant(std::uint64_t v) {
  SymValue out;
  out.values_.insert(v);
  return out;
}

SymValue SymValue::consts(Set values) {
  SymValue out;
  out.values_ = std::move(values);
  return out;
}

SymValue SymValue::unknown(SymbolId s) {
  SymValue out;
  out.symbol_ = s;
  return out;
}

SymValue join(const SymValue& a, const SymValue& b, std::size_t max_values) {
  if (a.is_const() && b.is_const()) {
    SymValue::Set out = a.values();
    out.insert(b.values().begin(), b.values().end());
    if (out.size() > max_values) return SymValue::unknown();
    return SymValue::consts(std::move(out));
  }
  if (a.is_unknown() && b.is_unknown() && a.symbol() == b.symbol()) return a;
  return SymValue::unknown();
}

std::string to_string(const SymValue& v) {
  if (v.is_unknown()) return to_string(v.symbol());
  std::ostringstream out;
  out << '{';
  bool first = true;
  for (auto x : v.values()) {
    out << (first ? "" : ",") << x;
    first = false;
  }
  out << '}';
  return out.str();
}

std::string to_string(const Query& q) {
  if (q.kind == Query::Kind::Register) return std::string(gpr_name(q.reg));
  return "[rsp+" + std::to_string(q.offset) + "]";
}

std::string_view to_string(DirectedResult::Status s) {
  switch (s) {
    case DirectedResult::Status::Resolved: return "resolved";
    case DirectedResult::Status::StillSymbolic: return "still-symbolic";
    case DirectedResult::Status::BudgetExhausted: return "budget-exhausted";
  }
  return "?";
}

SymState initial_state(bool fresh_symbols) {
  SymState s;
  s.fresh = fresh_symbols;
  for (std::size_t i = 0; i < kGprCount; ++i) {
    s.regs[i] = fresh_symbols ? SymValue::unknown(SymbolId::entry_register(static_cast<Gpr>(i)))
                              : SymValue::unknown();
  }
  s.alias[kRsp] = StackAddr{0, 0};
  return s;
}

SymValue read_reg(const SymState& s, RegRef r) {
  const SymValue& v = s.regs[static_cast<std::size_t>(r.reg)];
  if (v.is_unknown()) {
    return r.width == Width::H8 ? SymValue::unknown() : v;
  }
  return v.map([w = r.width](std::uint64_t x) { return apply_read(x, w); });
}

SymValue load_stack(const SymState& s, StackAddr addr, unsigned size) {
  if (const StackSlot* slot = exact_slot(s, addr)) {
    if (slot->size < size) return SymValue::unknown();
    if (slot->value.is_unknown()) {
      return slot->size == size ? slot->value : SymValue::unknown();
    }
    return slot->value.map([m = size_mask(size)](std::uint64_t x) { return x & m; });
  }
  if (any_overlap(s, addr, size)) return SymValue::unknown();
  return default_slot_value(s, addr);
}

void apply_op(SymState& s, const MicroOp& op, const ExecOptions& opts) {
  const std::size_t maxv = opts.max_value_set_size;
  switch (op.kind) {
    case OpKind::WriteRegConst:
      write_reg(s, op.dst, SymValue::constant(op.imm), maxv);
      break;
    case OpKind::CopyRegReg: {
      SymValue v = read_reg(s, op.src);
      if (op.extend == Extend::Sign && v.is_const()) {
        v = v.map([bits = width_bits(op.src.width)](std::uint64_t x) { return sign_extend(x, bits); });
      }
      auto alias = s.alias[static_cast<std::size_t>(op.src.reg)];
      write_reg(s, op.dst, v, maxv);
      if (op.dst.width == Width::W64 && op.src.width == Width::W64) {
        s.alias[static_cast<std::size_t>(op.dst.reg)] = alias;
      }
      break;
    }
    case OpKind::LoadEffectiveAddress:
      if (op.stack_address) {
        auto addr = resolve(s, op.slot);
        write_reg(s, op.dst, SymValue::unknown(), maxv);
        if (op.dst.width == Width::W64) s.alias[static_cast<std::size_t>(op.dst.reg)] = addr;
      } else {
        write_reg(s, op.dst, SymValue::constant(op.imm), maxv);
      }
      break;
    case OpKind::StoreStack: {
      auto addr = resolve(s, op.slot);
      if (!addr) {
        if (opts.strict_memory) forget_stack(s);
        break;
      }
      std::optional<StackAddr> alias;
      SymValue v = source_value(s, op, alias);
      store(s, *addr, op.size, std::move(v), alias);
      break;
    }
    case OpKind::LoadStack: {
      auto addr = resolve(s, op.slot);
      SymValue v = addr ? load_stack(s, *addr, op.size) : SymValue::unknown();
      auto alias = addr ? load_alias(s, *addr, op.size) : std::nullopt;
      if (op.extend == Extend::Sign && v.is_const()) {
        v = v.map([bits = op.size * 8](std::uint64_t x) { return sign_extend(x, bits); });
      }
      write_reg(s, op.dst, v, maxv);
      if (op.dst.width == Width::W64) s.alias[static_cast<std::size_t>(op.dst.reg)] = alias;
      break;
    }
    case OpKind::StoreUnknown:
      if (opts.strict_memory) forget_stack(s);
      break;
    case OpKind::LoadUnknown:
    case OpKind::HavocReg:
      write_reg(s, op.dst, SymValue::unknown(), maxv);
      break;
    case OpKind::ArithImm: {
      if (op.dst.reg == Gpr::Rsp) {
        apply_rsp_arith(s, op);
        break;
      }
      auto idx = static_cast<std::size_t>(op.dst.reg);
      auto alias = s.alias[idx];
      SymValue v = read_reg(s, op.dst).map(
          [&](std::uint64_t x) { return arith(op.arith, x, op.imm); });
      write_reg(s, op.dst, v, maxv);
      if (alias && op.dst.width == Width::W64 &&
          (op.arith == ArithKind::Add || op.arith == ArithKind::Sub)) {
        auto delta = static_cast<std::int64_t>(op.imm);
        alias->offset += op.arith == ArithKind::Add ? delta : -delta;
        s.alias[idx] = alias;
      }
      break;
    }
    case OpKind::Push: {
      auto& sp = s.alias[kRsp];
      if (!sp) break;
      std::optional<StackAddr> alias;
      SymValue v = source_value(s, op, alias);
      sp->offset -= 8;
      store(s, *sp, 8, std::move(v), alias);
      break;
    }
    case OpKind::Pop: {
      auto sp = s.alias[kRsp];
      if (!sp) {
        write_reg(s, op.dst, SymValue::unknown(), maxv);
        break;
      }
      SymValue v = load_stack(s, *sp, 8);
      auto alias = load_alias(s, *sp, 8);
      s.alias[kRsp]->offset += 8;
      write_reg(s, op.dst, v, maxv);
      s.alias[static_cast<std::size_t>(op.dst.reg)] = alias;
      break;
    }
    case OpKind::Syscall:
      // The kernel returns in rax and clobbers rcx and r11.
      for (Gpr g : {Gpr::Rax, Gpr::Rcx, Gpr::R11}) write_reg(s, {g, Width::W64}, SymValue::unknown(), maxv);
      break;
    default:
      break;
  }
}

SymState summarize_call(SymState state, Addr /*callee*/, const ExecOptions& opts) {
  for (std::size_t i = 0; i < kGprCount; ++i) {
    if (is_caller_saved(static_cast<Gpr>(i))) {
      state.regs[i] = SymValue::unknown();
      state.alias[i].reset();
    }
  }
  if (opts.strict_memory) {
    forget_stack(state);
    return state;
  }
  // The callee's frame lives below the caller's stack pointer.
  if (auto sp = state.sp()) {
    std::erase_if(state.stack, [&](const auto& kv) {
      return kv.first.epoch == sp->epoch && kv.first.offset < sp->offset;
    });
  }
  return state;
}

SymValue evaluate_query(const SymState& s, const Query& q) {
  if (q.kind == Query::Kind::Register) return s.reg(q.reg);
  auto sp = s.sp();
  if (!sp) return SymValue::unknown();
  return load_stack(s, {sp->epoch, sp->offset + q.offset}, q.size);
}

bool followed_by_engine(EdgeKind k) { return k != EdgeKind::ReturnTo; }

namespace {

using Clock = std::chrono::steady_clock;

// Two states can be merged when everything that decides *where* later
// values come from agrees; the values themselves are then joined.
// With fresh symbols a join that turns an entry symbol anonymous would hide
// which parameter reached the target, so such states stay apart.
bool loses_symbol(const SymValue& a, const SymValue& b, const SymValue& joined) {
  return joined.is_unknown() && !joined.symbol().is_entry() &&
         ((a.is_unknown() && a.symbol().is_entry()) || (b.is_unknown() && b.symbol().is_entry()));
}

bool try_merge(SymState& into, const SymState& s, std::size_t max_values) {
  if (into.alias != s.alias || into.call_stack != s.call_stack ||
      into.next_epoch != s.next_epoch || into.stack_havocked != s.stack_havocked ||
      into.fresh != s.fresh) {
    return false;
  }
  std::map<StackAddr, StackSlot> merged;
  auto a = into.stack.begin();
  auto b = s.stack.begin();
  while (a != into.stack.end() || b != s.stack.end()) {
    if (b == s.stack.end() || (a != into.stack.end() && a->first < b->first)) {
      if (a->second.alias || any_overlap(s, a->first, a->second.size)) return false;
      merged.emplace(a->first, StackSlot{join(a->second.value, load_stack(s, a->first, a->second.size),
                                              max_values),
                                         std::nullopt, a->second.size});
      ++a;
    } else if (a == into.stack.end() || b->first < a->first) {
      if (b->second.alias || any_overlap(into, b->first, b->second.size)) return false;
      merged.emplace(b->first,
                     StackSlot{join(load_stack(into, b->first, b->second.size), b->second.value,
                                    max_values),
                               std::nullopt, b->second.size});
      ++b;
    } else {
      if (a->second.size != b->second.size || a->second.alias != b->second.alias) return false;
      merged.emplace(a->first, StackSlot{join(a->second.value, b->second.value, max_values),
                                         a->second.alias, a->second.size});
      ++a;
      ++b;
    }
  }
  std::array<SymValue, kGprCount> regs;
  for (std::size_t i = 0; i < kGprCount; ++i) {
    regs[i] = join(into.regs[i], s.regs[i], max_values);
    if (s.fresh && loses_symbol(into.regs[i], s.regs[i], regs[i])) return false;
  }
  if (s.fresh) {
    for (const auto& [addr, slot] : merged) {
      if (loses_symbol(load_stack(into, addr, slot.size), load_stack(s, addr, slot.size), slot.value)) {
        return false;
      }
    }
  }
  into.stack = std::move(merged);
  into.regs = std::move(regs);
  std::map<Addr, std::uint16_t> visits;
  for (const auto& [blk, n] : into.visits) {
    auto it = s.visits.find(blk);
    if (it != s.visits.end()) visits[blk] = std::min(n, it->second);
  }
  into.visits = std::move(visits);
  into.steps = std::min(into.steps, s.steps);
  return true;
}

class DirectedRun {
 public:
  DirectedRun(const Cfg& cfg, Addr target, const std::set<Addr>& allowed, const Query& query,
              const ExecBudget& budget, const ExecOptions& opts)
      : cfg_(cfg), target_(target), allowed_(allowed), query_(query), budget_(budget),
        opts_(opts), deadline_(Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                                  std::chrono::duration<double>(budget.wall_clock_limit))) {}

  DirectedResult run(Addr start) {
    compute_order(start);
    push(start, initial_state(opts_.fresh_symbols));
    while (!pending_.empty() && !exhausted_) {
      auto node = pending_.begin();
      Addr block = node->first.second;
      SymState s = std::move(node->second.back());
      node->second.pop_back();
      if (node->second.empty()) pending_.erase(node);
      --live_;
      ++result_.states_explored;
      if ((result_.states_explored & 255) == 0 && Clock::now() > deadline_) {
        exhausted_ = true;
        break;
      }
      step(block, std::move(s));
    }
    if (exhausted_) {
      result_.status = DirectedResult::Status::BudgetExhausted;
    } else if (result_.paths_completed == 0 || !result_.symbols.empty()) {
      result_.status = DirectedResult::Status::StillSymbolic;
    } else {
      result_.status = DirectedResult::Status::Resolved;
    }
    return result_;
  }

 private:
  void compute_order(Addr start) {
    // Reverse post-order over the allowed subgraph, used as the worklist
    // priority so that join points are processed after their predecessors.
    std::vector<Addr> post;
    std::set<Addr> seen{start};
    std::vector<std::pair<Addr, std::size_t>> stack{{start, 0}};
    while (!stack.empty()) {
      auto& [b, i] = stack.back();
      const auto& out = cfg_.out_edges(b);
      if (i < out.size()) {
        Addr d = out[i++].dst;
        if (allowed_.count(d) && seen.insert(d).second) stack.push_back({d, 0});
      } else {
        post.push_back(b);
        stack.pop_back();
      }
    }
    for (std::size_t i = 0; i < post.size(); ++i) order_[post[post.size() - 1 - i]] = i;
  }

  std::size_t order_of(Addr b) const {
    auto it = order_.find(b);
    return it == order_.end() ? order_.size() : it->second;
  }

  void push(Addr block, SymState s) {
    if (!allowed_.count(block)) return;
    auto& bucket = pending_[{order_of(block), block}];
    for (auto& other : bucket) {
      if (try_merge(other, s, opts_.max_value_set_size)) return;
    }
    if (live_ >= budget_.max_states) {
      exhausted_ = true;
      return;
    }
    bucket.push_back(std::move(s));
    ++live_;
  }

  void complete(const SymState& s) {
    ++result_.paths_completed;
    SymValue v = evaluate_query(s, query_);
    if (v.is_const()) {
      result_.values.insert(v.values().begin(), v.values().end());
    } else {
      result_.symbols.insert(v.symbol());
    }
  }

  void step(Addr block, SymState s) {
    const LiftedBlock* b = cfg_.block(block);
    if (!b || b->unknown_effects) return;
    auto& visits = s.visits[block];
    if (visits >= budget_.max_loop_visits) return;
    ++visits;
    s.path.push_back(block);

    Addr prev_insn = ~Addr{0};
    for (const auto& op : b->ops) {
      if (op.insn != prev_insn && op.insn == target_) {
        complete(s);
        return;
      }
      prev_insn = op.insn;
      if (++s.steps > budget_.max_steps_per_state) {
        exhausted_ = true;
        return;
      }
      apply_op(s, op, opts_);
    }

    switch (b->terminator) {
      case Terminator::CallDirect:
      case Terminator::CallIndirect:
        return leave_call(*b, std::move(s));
      case Terminator::Return: {
        if (s.call_stack.empty()) return;  // leaves the explored frame
        Addr ret = s.call_stack.back();
        s.call_stack.pop_back();
        if (s.alias[kRsp]) s.alias[kRsp]->offset += 8;
        return push(ret, std::move(s));
      }
      case Terminator::Halt:
        return;
      default:
        break;
    }
    const auto& out = cfg_.out_edges(block);
    std::size_t n = 0;
    for (const auto& e : out) n += followed_by_engine(e.kind) && allowed_.count(e.dst);
    for (const auto& e : out) {
      if (!followed_by_engine(e.kind) || !allowed_.count(e.dst)) continue;
      if (--n == 0) {
        push(e.dst, std::move(s));
        break;
      }
      push(e.dst, s);
    }
  }

  void leave_call(const LiftedBlock& b, SymState s) {
    Addr ret = b.end();
    bool ret_edge = cfg_.has_edge(b.start, ret, EdgeKind::Fallthrough);
    for (const auto& e : cfg_.out_edges(b.start)) {
      if (e.kind == EdgeKind::Fallthrough || e.kind == EdgeKind::ReturnTo) continue;
      if (!allowed_.count(e.dst)) continue;
      SymState callee = s;
      if (auto& sp = callee.alias[kRsp]) {
        sp->offset -= 8;
        store(callee, *sp, 8, SymValue::constant(ret), std::nullopt);
      }
      callee.call_stack.push_back(ret);
      push(e.dst, std::move(callee));
    }
    // Continuing past the call without descending covers callees outside the
    // allowed set and paths through allowed callees that return early.
    if (ret_edge && allowed_.count(ret)) {
      Addr callee = b.direct_target().value_or(0);
      push(ret, summarize_call(std::move(s), callee, opts_));
    }
  }

  const Cfg& cfg_;
  Addr target_;
  const std::set<Addr>& allowed_;
  Query query_;
  ExecBudget budget_;
  ExecOptions opts_;
  Clock::time_point deadline_;
  std::map<Addr, std::size_t> order_;
  std::map<std::pair<std::size_t, Addr>, std::vector<SymState>> pending_;
  std::size_t live_ = 0;
  bool exhausted_ = false;
  DirectedResult result_;
};

}  // namespace

DirectedResult run_directed(const Cfg& cfg, Addr start, Addr target, const std::set<Addr>& allowed,
                            const Query& query, const ExecBudget& budget, const ExecOptions& opts) {
  if (!allowed.count(start)) return {};
  return DirectedRun(cfg, target, allowed, query, budget, opts).run(start);
}

}  // namespace sysid
