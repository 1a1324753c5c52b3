#include "sysid/fixtures.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "sysid/error.hpp"
#include "sysid/syscall_table.hpp"

namespace sysid {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, path.string() + ": " + what);
}

SyscallSet syscall_list(const json& j, const std::filesystem::path& path) {
  SyscallSet out;
  for (const auto& e : j) {
    if (e.is_number_unsigned()) {
      out.insert(e.get<std::uint64_t>());
    } else if (auto nr = SyscallTable::latest().number(e.get<std::string>())) {
      out.insert(*nr);
    } else {
      bad(path, "unknown syscall " + e.dump());
    }
  }
  return out;
}

}  // namespace

FixtureManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  auto root = path.parent_path().parent_path();
  FixtureManifest m;
  try {
    json j = json::parse(in);
    m.name = j.at("name").get<std::string>();
    m.scenario = j.at("scenario").get<std::string>();
    m.build = j.value("build", "");
    m.binary = root / j.at("binary").get<std::string>();
    for (const auto& d : j.value("dlopen", json::array())) m.dlopen_libs.push_back(root / d.get<std::string>());
    for (const auto& t : j.value("traces", json::array())) m.traces.push_back(root / t.get<std::string>());
    m.traces_exhaustive = j.value("traces_exhaustive", false);
    m.expected_syscalls = syscall_list(j.at("expected_syscalls"), path);
    if (j.contains("expected_sites")) m.expected_sites = j["expected_sites"].get<std::size_t>();
    for (const auto& w : j.value("expected_wrappers", json::array())) {
      m.expected_wrappers.push_back({w.at("function").get<std::string>(), w.at("param").get<std::string>()});
    }
    m.expected_complete = j.value("expected_complete", true);
    m.wrapper_heuristic = j.value("wrapper_heuristic", true);
    m.loader_baseline = j.value("loader_baseline", true);
    m.notes = j.value("notes", "");
  } catch (const json::exception& e) {
    bad(path, e.what());
  }
  if (std::find(std::begin(kScenarioTags), std::end(kScenarioTags), m.scenario) == std::end(kScenarioTags)) {
    bad(path, "unknown scenario tag " + m.scenario);
  }
  return m;
}

std::vector<FixtureManifest> load_manifests(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FixtureManifest> out;
  for (const auto& f : files) out.push_back(load_manifest(f));
  return out;
}

std::vector<std::string> missing_scenarios(const std::vector<FixtureManifest>& manifests) {
  std::vector<std::string> out;
  for (auto tag : kScenarioTags) {
    bool seen = std::any_of(manifests.begin(), manifests.end(), [&](const auto& m) { return m.scenario == tag; });
    if (!seen) out.emplace_back(tag);
  }
  return out;
}

AnalyzeOptions analyze_options(const FixtureManifest& m, AnalyzeOptions base) {
  base.identify.wrapper_heuristic = m.wrapper_heuristic;
  base.loader_baseline = m.loader_baseline;
  base.dlopen_libs = m.dlopen_libs;
  return base;
}

std::string FixtureVerdict::summary(const std::string& name) const {
  auto list = [](const SyscallSet& s) {
    std::string out;
    for (auto n : s) out += (out.empty() ? "" : ",") + SyscallTable::latest().display_name(n);
    return out;
  };
  std::string out = name + (pass ? ": ok" : ": FAIL");
  out += " FP=" + std::to_string(fp_count());
  if (!missing.empty()) out += " missing={" + list(missing) + "}";
  if (!extra.empty()) out += " extra={" + list(extra) + "}";
  for (const auto& p : problems) out += "; " + p;
  return out;
}

FixtureVerdict verify_fixture(const FixtureManifest& m, const ProgramAnalysis& a) {
  FixtureVerdict v;
  for (auto n : m.expected_syscalls) {
    if (!a.syscalls.count(n)) v.missing.insert(n);
  }
  for (auto n : a.syscalls) {
    if (!m.expected_syscalls.count(n)) v.extra.insert(n);
  }
  if (a.complete != m.expected_complete) {
    v.pass = false;
    v.problems.push_back(std::string("analysis is ") + (a.complete ? "complete" : "incomplete") + ", expected " +
                         (m.expected_complete ? "complete" : "incomplete"));
  }
  if (!v.missing.empty() && (a.complete || m.expected_complete)) v.pass = false;
  if (m.expected_sites && a.ident.sites.size() != *m.expected_sites) {
    v.pass = false;
    v.problems.push_back("sites " + std::to_string(a.ident.sites.size()) + ", expected " +
                         std::to_string(*m.expected_sites));
  }
  std::vector<std::pair<std::string, std::string>> want, got;
  for (const auto& w : m.expected_wrappers) want.emplace_back(w.function, w.param);
  for (const auto& [entry, w] : a.ident.wrappers) {
    const auto* f = a.cfg.function_at(entry);
    got.emplace_back(f && f->name ? *f->name : hex(entry), to_string(w.param_location));
  }
  std::sort(want.begin(), want.end());
  std::sort(got.begin(), got.end());
  if (want != got) {
    v.pass = false;
    std::string s = "wrappers {";
    for (const auto& [f, p] : got) s += f + ":" + p + " ";
    v.problems.push_back(s + "} differ from the manifest");
  }
  return v;
}

}  // namespace sysid
