#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <boost/container/flat_set.hpp>

#include "sysid/cfg.hpp"
#include "sysid/registers.hpp"

namespace sysid {

inline constexpr std::size_t kDefaultMaxValueSet = 64;

/// Identity of an unknown value. Entry symbols name the value a register or
/// entry stack slot held when the analyzed function was entered; they are
/// what lets wrapper detection say *which* parameter reaches rax.
struct SymbolId {
  enum class Kind : std::uint8_t { Anonymous, EntryRegister, EntryStack };
  Kind kind = Kind::Anonymous;
  Gpr reg = Gpr::Rax;       // EntryRegister
  std::int64_t offset = 0;  // EntryStack: byte offset from rsp at entry

  static SymbolId anonymous() { return {}; }
  static SymbolId entry_register(Gpr g) { return {Kind::EntryRegister, g, 0}; }
  static SymbolId entry_stack(std::int64_t off) { return {Kind::EntryStack, Gpr::Rax, off}; }

  bool is_entry() const { return kind != Kind::Anonymous; }
  auto operator<=>(const SymbolId&) const = default;
};

std::string to_string(const SymbolId& s);

/// Either a bounded non-empty set of constants or an unknown value.
class SymValue {
 public:
  using Set = boost::container::flat_set<std::uint64_t>;

  SymValue() = default;  // anonymous unknown
  static SymValue constant(std::uint64_t v);
  static SymValue consts(Set values);
  static SymValue unknown(SymbolId s = SymbolId::anonymous());

  bool is_const() const { return !values_.empty(); }
  bool is_unknown() const { return values_.empty(); }
  const Set& values() const { return values_; }
  const SymbolId& symbol() const { return symbol_; }

  /// Applies `f` to every constant; unknown inputs yield anonymous unknown.
  template <class F>
  SymValue map(F f) const {
    if (!is_const()) return unknown();
    Set out;
    for (auto v : values_) out.insert(f(v));
    return consts(std::move(out));
  }

  bool operator==(const SymValue&) const = default;

 private:
  Set values_;
  SymbolId symbol_;
};

/// Union of constant sets (unknown once larger than `max_values`); joining
/// with an unknown is unknown, and keeps its symbol only if both sides agree.
SymValue join(const SymValue& a, const SymValue& b, std::size_t max_values = kDefaultMaxValueSet);

std::string to_string(const SymValue& v);

/// A stack location: frames are numbered by epoch (a new epoch starts when
/// rsp is realigned with `and`), offsets are relative to the epoch base.
struct StackAddr {
  std::uint32_t epoch = 0;
  std::int64_t offset = 0;

  auto operator<=>(const StackAddr&) const = default;
};

struct StackSlot {
  SymValue value;
  std::optional<StackAddr> alias;  // the slot holds a pointer into the stack
  unsigned size = 8;

  bool operator==(const StackSlot&) const = default;
};

struct SymState {
  std::array<SymValue, kGprCount> regs;
  // Registers known to hold a stack address. alias[rsp] is the stack
  // pointer itself; nullopt there means sp-lost.
  std::array<std::optional<StackAddr>, kGprCount> alias;
  std::map<StackAddr, StackSlot> stack;
  bool stack_havocked = false;  // strict mode lost track of stack memory
  bool fresh = false;           // unwritten entry slots read as entry symbols
  std::uint32_t next_epoch = 1;
  std::vector<Addr> call_stack;  // return sites of descended calls
  std::vector<Addr> path;
  std::map<Addr, std::uint16_t> visits;
  std::size_t steps = 0;

  const std::optional<StackAddr>& sp() const { return alias[static_cast<std::size_t>(Gpr::Rsp)]; }
  bool sp_lost() const { return !sp().has_value(); }
  std::optional<std::int64_t> stack_pointer_offset() const {
    return sp() ? std::optional<std::int64_t>(sp()->offset) : std::nullopt;
  }

  const SymValue& reg(Gpr g) const { return regs[static_cast<std::size_t>(g)]; }
  SymValue& reg(Gpr g) { return regs[static_cast<std::size_t>(g)]; }
};

struct ExecBudget {
  std::size_t max_states = 4096;
  std::size_t max_steps_per_state = 10000;
  std::size_t max_loop_visits = 2;
  double wall_clock_limit = 60.0;  // seconds per query
};

struct ExecOptions {
  std::size_t max_value_set_size = kDefaultMaxValueSet;
  // Writes through unknown addresses (and summarized calls) forget every
  // tracked stack slot instead of leaving them intact.
  bool strict_memory = false;
  // Registers and entry stack slots start as distinguishable entry symbols.
  bool fresh_symbols = false;
};

/// Where the queried value lives when the target instruction is reached.
struct Query {
  enum class Kind : std::uint8_t { Register, StackSlot };
  Kind kind = Kind::Register;
  Gpr reg = Gpr::Rax;
  std::int64_t offset = 0;  // StackSlot: bytes from rsp at the target
  unsigned size = 8;

  static Query reg_query(Gpr g) { return {Kind::Register, g, 0, 8}; }
  static Query stack_query(std::int64_t off, unsigned size = 8) {
    return {Kind::StackSlot, Gpr::Rax, off, size};
  }
  auto operator<=>(const Query&) const = default;
};

std::string to_string(const Query& q);

struct DirectedResult {
  enum class Status : std::uint8_t { Resolved, StillSymbolic, BudgetExhausted };
  Status status = Status::StillSymbolic;
  SymValue::Set values;            // constants seen at the target (all paths)
  std::set<SymbolId> symbols;      // unknown values seen at the target
  std::size_t paths_completed = 0;
  std::size_t states_explored = 0;

  bool resolved() const { return status == Status::Resolved; }
};

std::string_view to_string(DirectedResult::Status s);

SymState initial_state(bool fresh_symbols);

/// Reads a register through a sub-register view.
SymValue read_reg(const SymState& s, RegRef r);

/// Applies one non-control micro-op. Control-flow ops are no-ops here; the
/// engine interprets them.
void apply_op(SymState& s, const MicroOp& op, const ExecOptions& opts = {});

/// Value a load of `size` bytes at `addr` observes.
SymValue load_stack(const SymState& s, StackAddr addr, unsigned size);

/// Effect of a call whose body is not explored: caller-saved registers are
/// clobbered, callee-saved registers and the caller's stack slots survive.
SymState summarize_call(SymState state, Addr callee, const ExecOptions& opts = {});

SymValue evaluate_query(const SymState& s, const Query& q);

/// Forward execution from `start` restricted to `allowed`, collecting the
/// queried value whenever `target` (an instruction address) is reached.
DirectedResult run_directed(const Cfg& cfg, Addr start, Addr target,
                            const std::set<Addr>& allowed, const Query& query,
                            const ExecBudget& budget = {}, const ExecOptions& opts = {});

/// Edges the engine follows when leaving a block (everything but ReturnTo;
/// returns are matched against the state's call stack instead).
bool followed_by_engine(EdgeKind k);

}  // namespace sysid
