#pragma once

// Independent reference implementations the property tests compare against.
// Nothing here calls into the analysis code it checks.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "sysid/cfg.hpp"
#include "sysid/phase_automaton.hpp"

namespace sysid::testing {

/// A synthetic CFG of micro-op blocks with a syscall in the last block.
struct MicroCfgCase {
  Cfg cfg;
  Addr start = 0;
  Addr target = 0;  // address of the syscall instruction
  std::set<Addr> allowed;
  std::vector<Addr> order;  // blocks by index
};

/// Blocks only jump forward unless `with_loops`, which adds back edges.
/// Graphs with more than `max_paths` start-to-target paths are redrawn.
MicroCfgCase random_micro_cfg(std::mt19937_64& rng, bool with_loops, std::size_t max_blocks = 30,
                              std::size_t max_paths = 20000);

struct PathOracle {
  std::set<std::uint64_t> values;  // rax at the target over fully concrete paths
  bool any_unknown = false;        // some path reaches the target with rax unknown
  std::size_t paths = 0;
};

/// Enumerates every start-to-target path visiting each block at most
/// `max_visits` times and interprets it concretely.
PathOracle enumerate_paths(const MicroCfgCase& c, std::size_t max_visits);

/// Random NFA with epsilon moves.
SyscallNfa random_nfa(std::mt19937_64& rng, std::size_t max_states = 8, std::size_t max_alphabet = 4);

/// Textbook subset construction over bitmasks (at most 64 NFA states).
struct ReferenceDfa {
  std::vector<std::uint64_t> subsets;
  std::vector<std::map<std::uint64_t, std::size_t>> delta;
  std::size_t initial = 0;
};
ReferenceDfa reference_subset_construction(const SyscallNfa& nfa);
bool reference_accepts(const ReferenceDfa& dfa, const std::vector<std::uint64_t>& word);

/// Every word over `alphabet` of length 0..max_len.
std::vector<std::vector<std::uint64_t>> all_words(const SyscallSet& alphabet, std::size_t max_len);

}  // namespace sysid::testing
