#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sysid/cfg.hpp"
#include "sysid/syscall_id.hpp"

namespace sysid {

/// Transition label: a syscall number, or nullopt for an empty move.
using Label = std::optional<std::uint64_t>;

/// Every state accepts: the language is the set of syscall sequences the
/// program can issue from its entry (prefix-closed).
struct SyscallNfa {
  std::size_t initial = 0;
  SyscallSet alphabet;
  std::vector<std::map<Label, std::set<std::size_t>>> delta;  // per state
  std::vector<std::optional<Addr>> block;  // CFG block of each state (nullopt: synthetic)
  std::vector<std::uint64_t> bytes;        // code size of each state's block

  std::size_t size() const { return delta.size(); }
  std::size_t add_state(std::optional<Addr> blk = std::nullopt, std::uint64_t size = 0);
  void add(std::size_t from, Label l, std::size_t to);
};

struct NfaOptions {
  // Label unresolved sites with `fallback` instead of failing.
  bool allow_unresolved = false;
  SyscallSet fallback;
  // Blocks standing for a call into another module (PLT stubs, GOT calls)
  // and the syscalls that call may issue in any order.
  std::map<Addr, SyscallSet> external_calls;
};

/// States are the reachable CFG blocks. Edges leaving a syscall block carry
/// one transition per number of its site; every other edge is empty.
/// Throws UnresolvedSitesPresent unless `allow_unresolved`.
SyscallNfa build_nfa(const Cfg& cfg, const ProgramIdentification& ident, const NfaOptions& opts = {});

inline constexpr std::size_t kDefaultMaxDfaStates = 1'000'000;
inline constexpr double kDefaultJaccardThreshold = 0.9;

struct PhaseDfa {
  std::vector<std::vector<std::size_t>> states;  // NFA state subsets, sorted
  std::vector<std::map<std::uint64_t, std::size_t>> delta;
  std::size_t initial = 0;
  SyscallSet alphabet;
  // Filled by merge_phases.
  std::vector<std::size_t> phase_of;
  std::vector<std::vector<std::size_t>> phases;
  std::vector<SyscallSet> allowed;
  std::vector<std::uint64_t> code_size;

  std::size_t initial_phase() const { return phase_of.at(initial); }
  /// Distinct phase pairs (P, P') with a transition from P to P', P != P'.
  std::set<std::pair<std::size_t, std::size_t>> phase_edges() const;
  /// Number of distinct labels on transitions from phase P to phase P'.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> transition_matrix() const;
};

/// Subset construction over reachable subsets. Throws StateBlowup past
/// `max_states`.
PhaseDfa determinize(const SyscallNfa& nfa, std::size_t max_states = kDefaultMaxDfaStates);

/// Phases are the strongly connected components of the DFA; adjacent phases
/// whose allowed sets have Jaccard similarity >= tau are then merged (tau of
/// 1.0 or more disables that pass). `nfa` supplies block sizes.
PhaseDfa merge_phases(PhaseDfa dfa, const SyscallNfa& nfa, double tau = kDefaultJaccardThreshold);

/// Widens each phase with the allowed sets of the phases it can move to,
/// so successive filters only ever get stricter.
PhaseDfa back_propagate(PhaseDfa dfa);

double jaccard(const SyscallSet& a, const SyscallSet& b);

/// Whether the automaton can read `word` from its initial state.
bool nfa_accepts(const SyscallNfa& nfa, const std::vector<std::uint64_t>& word);
bool dfa_accepts(const PhaseDfa& dfa, const std::vector<std::uint64_t>& word);
/// Replays `word` through the phases: every symbol must be allowed by the
/// phase of the current state.
bool phase_policy_admits(const PhaseDfa& dfa, const std::vector<std::uint64_t>& word);

}  // namespace sysid
