#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "sysid/phase_automaton.hpp"
#include "sysid/pipeline.hpp"
#include "sysid/syscall_table.hpp"
#include "sysid/types.hpp"

namespace sysid {

enum class DefaultAction : std::uint8_t { Errno, Kill, Log };
enum class UnresolvedPolicy : std::uint8_t { Fail, AllowAll, AllowListed };
enum class ProfileFormat : std::uint8_t { OciSeccompJson, PlainList };

std::string_view to_string(DefaultAction a);
std::string_view to_string(UnresolvedPolicy p);
std::optional<DefaultAction> parse_default_action(std::string_view s);
std::optional<UnresolvedPolicy> parse_unresolved_policy(std::string_view s);

struct FilterProfile {
  DefaultAction default_action = DefaultAction::Errno;
  SyscallSet allowed;
  std::map<std::uint64_t, std::vector<std::string>> provenance;
  bool complete = true;
  UnresolvedPolicy policy = UnresolvedPolicy::Fail;
};

/// Applies the unresolved-site policy: allow-all widens to the whole table,
/// allow-listed adds `extra`. A failing policy is reported at emission.
FilterProfile make_profile(const SyscallSet& syscalls, bool complete,
                           const std::map<std::uint64_t, std::set<std::string>>& provenance,
                           UnresolvedPolicy policy, const SyscallSet& extra = {},
                           const SyscallTable& table = SyscallTable::latest());

/// Canonical output. Throws UnresolvedWithoutPolicy for an incomplete
/// profile under the `fail` policy.
std::string emit_profile(const FilterProfile& profile, ProfileFormat format,
                         const SyscallTable& table = SyscallTable::latest());

using Ratio = boost::rational<std::int64_t>;

struct Score {
  Ratio precision{0};
  Ratio recall{0};
  Ratio f1{0};
  SyscallSet true_positives;
  SyscallSet false_negatives;  // in the truth, missed by the analysis
  SyscallSet false_positives;  // reported, never observed

  static double value(const Ratio& r) { return boost::rational_cast<double>(r); }
};

/// Precision |A∩T|/|A|, recall |A∩T|/|T|, F1 2PR/(P+R); empty denominators
/// give 0.
Score score(const SyscallSet& analysis, const SyscallSet& truth);

struct GroundTruth {
  SyscallSet observed;
  std::string source;
  std::vector<std::string> unknown_names;
};

/// Reads a syscall trace: raw tracer lines ("name(args) = ret", optionally
/// prefixed by a pid), a tracer summary table, or bare names. Throws
/// UnreadableTrace.
GroundTruth parse_trace(const std::filesystem::path& path,
                        const SyscallTable& table = SyscallTable::latest());
GroundTruth parse_trace_text(std::string_view text, std::string source,
                             const SyscallTable& table = SyscallTable::latest());

/// One JSON object per line, the shape of the --json stream.
std::string diagnostic_json(const Diagnostic& d);

/// Per-site results, wrappers, provenance and diagnostics as JSON.
std::string analysis_report(const ProgramAnalysis& a, const SyscallTable& table = SyscallTable::latest());

/// Strictness of a phase: |allowed| / |alphabet| (0 for an empty alphabet).
Ratio strictness(const PhaseDfa& dfa, std::size_t phase);

/// Phases with their allowed sets, strictness and the phase transition
/// matrix; either JSON or an aligned text table.
std::string phase_report(const PhaseDfa& dfa, bool json, bool back_propagated,
                         const SyscallTable& table = SyscallTable::latest());

}  // namespace sysid
