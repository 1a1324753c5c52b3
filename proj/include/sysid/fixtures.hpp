#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sysid/pipeline.hpp"

namespace sysid {

inline constexpr std::string_view kScenarioTags[] = {"fig1A", "fig1B", "fig1C", "fig2A", "fig2B",
                                                     "fig4",  "fig5",  "dag",   "dlopen", "phases"};

struct ExpectedWrapper {
  std::string function;
  std::string param;  // ParamLocation text, "rdi" or "stack+8"
};

/// Ground truth for one fixture program, one JSON document per fixture.
struct FixtureManifest {
  std::string name;
  std::string scenario;
  std::string build;  // how bin/ was produced from asm/
  std::filesystem::path binary;
  std::vector<std::filesystem::path> dlopen_libs;
  std::vector<std::filesystem::path> traces;
  // The traces cover every feasible path, so their union must equal the
  // expected set rather than merely fall inside it.
  bool traces_exhaustive = false;
  SyscallSet expected_syscalls;
  std::optional<std::size_t> expected_sites;
  std::vector<ExpectedWrapper> expected_wrappers;
  bool expected_complete = true;
  bool wrapper_heuristic = true;
  bool loader_baseline = true;
  std::string notes;
};

/// Paths in the document are relative to the fixture root, the parent of
/// the manifest directory. Throws InvalidArgument on malformed input.
FixtureManifest load_manifest(const std::filesystem::path& path);
/// Every *.json in `dir`, sorted by name.
std::vector<FixtureManifest> load_manifests(const std::filesystem::path& dir);
/// Scenario tags with no fixture.
std::vector<std::string> missing_scenarios(const std::vector<FixtureManifest>& manifests);

AnalyzeOptions analyze_options(const FixtureManifest& m, AnalyzeOptions base = {});

struct FixtureVerdict {
  bool pass = true;
  SyscallSet missing;  // false negatives
  SyscallSet extra;    // false positives, tracked but never failing
  std::vector<std::string> problems;

  std::size_t fp_count() const { return extra.size(); }
  std::string summary(const std::string& name) const;
};

/// Fails on any false negative, except when both the manifest and the
/// analysis agree the result is incomplete: an incomplete result makes no
/// superset claim. Completeness, site count and wrappers must also match.
FixtureVerdict verify_fixture(const FixtureManifest& m, const ProgramAnalysis& analysis);

}  // namespace sysid
