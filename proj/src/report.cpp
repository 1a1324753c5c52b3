#include "sysid/report.hpp"

#include <regex>
#include <sstream>

#include "json.hpp"
#include "sysid/elf_image.hpp"
#include "sysid/error.hpp"

namespace sysid {

std::string_view to_string(DefaultAction a) {
  switch (a) {
    case DefaultAction::Errno: return "errno";
    case DefaultAction::Kill: return "kill";
    case DefaultAction::Log: return "log";
  }
  return "?";
}

std::string_view to_string(UnresolvedPolicy p) {
  switch (p) {
    case UnresolvedPolicy::Fail: return "fail";
    case UnresolvedPolicy::AllowAll: return "allow-all";
    case UnresolvedPolicy::AllowListed: return "allow-listed";
  }
  return "?";
}

std::optional<DefaultAction> parse_default_action(std::string_view s) {
  for (auto a : {DefaultAction::Errno, DefaultAction::Kill, DefaultAction::Log}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

std::optional<UnresolvedPolicy> parse_unresolved_policy(std::string_view s) {
  for (auto p : {UnresolvedPolicy::Fail, UnresolvedPolicy::AllowAll, UnresolvedPolicy::AllowListed}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

FilterProfile make_profile(const SyscallSet& syscalls, bool complete,
                           const std::map<std::uint64_t, std::set<std::string>>& provenance,
                           UnresolvedPolicy policy, const SyscallSet& extra, const SyscallTable& table) {
  FilterProfile p;
  p.allowed = syscalls;
  p.complete = complete;
  p.policy = policy;
  for (const auto& [n, src] : provenance) p.provenance[n] = {src.begin(), src.end()};
  if (!complete) {
    if (policy == UnresolvedPolicy::AllowAll) {
      auto all = table.all();
      p.allowed.insert(all.begin(), all.end());
    } else if (policy == UnresolvedPolicy::AllowListed) {
      p.allowed.insert(extra.begin(), extra.end());
    }
  }
  return p;
}

std::string emit_profile(const FilterProfile& profile, ProfileFormat format, const SyscallTable& table) {
  if (!profile.complete && profile.policy == UnresolvedPolicy::Fail) {
    throw Error(ErrorCode::UnresolvedWithoutPolicy,
                "some syscall sites are unresolved; choose an unresolved-site policy");
  }
  if (format == ProfileFormat::PlainList) {
    std::string out;
    for (auto n : profile.allowed) out += table.display_name(n) + "\n";
    return out;
  }
  nlohmann::ordered_json j;
  switch (profile.default_action) {
    case DefaultAction::Errno:
      j["defaultAction"] = "SCMP_ACT_ERRNO";
      j["defaultErrnoRet"] = 1;  // EPERM
      break;
    case DefaultAction::Kill: j["defaultAction"] = "SCMP_ACT_KILL_PROCESS"; break;
    case DefaultAction::Log: j["defaultAction"] = "SCMP_ACT_LOG"; break;
  }
  j["architectures"] = {"SCMP_ARCH_X86_64"};
  auto names = nlohmann::ordered_json::array();
  for (auto n : profile.allowed) names.push_back(table.display_name(n));
  auto rule = nlohmann::ordered_json::object();
  rule["names"] = std::move(names);
  rule["action"] = "SCMP_ACT_ALLOW";
  j["syscalls"] = nlohmann::ordered_json::array({std::move(rule)});
  return j.dump(2) + "\n";
}

Score score(const SyscallSet& analysis, const SyscallSet& truth) {
  Score s;
  for (auto n : analysis) (truth.count(n) ? s.true_positives : s.false_positives).insert(n);
  for (auto n : truth) {
    if (!analysis.count(n)) s.false_negatives.insert(n);
  }
  auto tp = static_cast<std::int64_t>(s.true_positives.size());
  if (!analysis.empty()) s.precision = Ratio(tp, static_cast<std::int64_t>(analysis.size()));
  if (!truth.empty()) s.recall = Ratio(tp, static_cast<std::int64_t>(truth.size()));
  // Mixed rational/integer comparisons recurse forever under C++20 operator
  // rewriting with this Boost release, so test the numerator instead.
  if ((s.precision + s.recall).numerator() != 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

GroundTruth parse_trace_text(std::string_view text, std::string source, const SyscallTable& table) {
  GroundTruth g;
  g.source = std::move(source);
  // Raw form, with an optional "[pid N]" or "N" prefix and an optional
  // timestamp: name(... The summary form ends a row of numbers with a name.
  static const std::regex raw(R"(^\s*(?:\[pid\s+\d+\]\s*|\d+\s+)?(?:[\d:.]+\s+)?([a-z_][a-z0-9_]*)\()");
  static const std::regex summary(R"(^\s*[\d.]+\s+[\d.]+\s+\d+\s+\d+(?:\s+\d+)?\s+([a-z_][a-z0-9_]*)\s*$)");
  static const std::regex bare(R"(^\s*([a-z_][a-z0-9_]*)\s*$)");
  std::set<std::string> unknown;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!(std::regex_search(line, m, raw) || std::regex_search(line, m, summary) ||
          std::regex_search(line, m, bare))) {
      continue;  // signals, exit notices, resumed calls, headers
    }
    std::string name = m[1];
    if (name == "total") continue;
    if (auto nr = table.number(name)) {
      g.observed.insert(*nr);
    } else if (name.starts_with("syscall_")) {
      try {
        g.observed.insert(std::stoull(name.substr(8)));
      } catch (const std::exception&) {
        unknown.insert(name);
      }
    } else {
      unknown.insert(name);
    }
  }
  g.unknown_names = {unknown.begin(), unknown.end()};
  return g;
}

GroundTruth parse_trace(const std::filesystem::path& path, const SyscallTable& table) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    throw Error(ErrorCode::UnreadableTrace, "cannot read trace " + path.string());
  }
  return parse_trace_text({reinterpret_cast<const char*>(bytes.data()), bytes.size()}, path.string(), table);
}

}  // namespace sysid

namespace sysid {
namespace {

nlohmann::ordered_json names_of(const SyscallSet& s, const SyscallTable& table) {
  auto out = nlohmann::ordered_json::array();
  for (auto n : s) out.push_back(table.display_name(n));
  return out;
}

std::string ratio_text(const Ratio& r) {
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace

std::string diagnostic_json(const Diagnostic& d) {
  nlohmann::ordered_json j;
  j["severity"] = to_string(d.severity);
  j["code"] = d.code;
  j["address"] = d.address ? nlohmann::ordered_json(hex(*d.address)) : nlohmann::ordered_json(nullptr);
  j["message"] = d.message;
  return j.dump();
}

std::string analysis_report(const ProgramAnalysis& a, const SyscallTable& table) {
  auto fname = [&](Addr entry) {
    const auto* f = a.cfg.function_at(entry);
    return f && f->name ? *f->name : hex(entry);
  };
  nlohmann::ordered_json j;
  j["complete"] = a.complete;
  j["syscalls"] = names_of(a.syscalls, table);
  auto sites = nlohmann::ordered_json::array();
  for (const auto& [addr, s] : a.ident.sites) {
    nlohmann::ordered_json e;
    e["address"] = hex(addr);
    e["function"] = fname(s.function);
    e["in_wrapper"] = s.in_wrapper;
    e["numbers"] = names_of(s.numbers, table);
    e["unresolved"] = s.unresolved ? nlohmann::ordered_json(*s.unresolved) : nlohmann::ordered_json(nullptr);
    e["paths_explored"] = s.paths_explored;
    sites.push_back(std::move(e));
  }
  j["sites"] = std::move(sites);
  auto wrappers = nlohmann::ordered_json::array();
  for (const auto& [entry, w] : a.ident.wrappers) {
    nlohmann::ordered_json e;
    e["function"] = fname(entry);
    e["param"] = to_string(w.param_location);
    e["evidence"] = to_string(w.confirmed_by);
    e["constants"] = names_of(w.constants, table);
    wrappers.push_back(std::move(e));
  }
  j["wrappers"] = std::move(wrappers);
  auto prov = nlohmann::ordered_json::object();
  for (const auto& [n, src] : a.provenance) prov[table.display_name(n)] = src;
  j["provenance"] = std::move(prov);
  auto origin = nlohmann::ordered_json::object();
  for (const auto& [lib, o] : a.interface_origin) origin[lib] = o;
  j["interfaces"] = std::move(origin);
  auto diags = nlohmann::ordered_json::array();
  for (const auto& d : a.diagnostics) diags.push_back(nlohmann::ordered_json::parse(diagnostic_json(d)));
  j["diagnostics"] = std::move(diags);
  return j.dump(2) + "\n";
}

Ratio strictness(const PhaseDfa& dfa, std::size_t phase) {
  if (dfa.alphabet.empty()) return 0;
  return Ratio(static_cast<std::int64_t>(dfa.allowed.at(phase).size()),
               static_cast<std::int64_t>(dfa.alphabet.size()));
}

std::string phase_report(const PhaseDfa& dfa, bool json, bool back_propagated, const SyscallTable& table) {
  auto matrix = dfa.transition_matrix();
  std::size_t n = dfa.phases.size();
  if (json) {
    nlohmann::ordered_json j;
    j["alphabet"] = names_of(dfa.alphabet, table);
    j["dfa_states"] = dfa.states.size();
    j["initial_phase"] = dfa.initial_phase();
    j["back_propagated"] = back_propagated;
    auto phases = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < n; ++p) {
      nlohmann::ordered_json e;
      e["id"] = p;
      e["states"] = dfa.phases[p];
      e["allowed"] = names_of(dfa.allowed[p], table);
      e["strictness"] = ratio_text(strictness(dfa, p));
      e["code_size"] = dfa.code_size[p];
      phases.push_back(std::move(e));
    }
    j["phases"] = std::move(phases);
    auto tr = nlohmann::ordered_json::array();
    for (const auto& [edge, count] : matrix) {
      tr.push_back({{"from", edge.first}, {"to", edge.second}, {"labels", count}});
    }
    j["transitions"] = std::move(tr);
    return j.dump(2) + "\n";
  }

  std::ostringstream out;
  out << "phases: " << n << "  dfa states: " << dfa.states.size() << "  alphabet: " << dfa.alphabet.size()
      << "  initial: " << dfa.initial_phase() << (back_propagated ? "  (back-propagated)" : "") << "\n\n";
  for (std::size_t p = 0; p < n; ++p) {
    auto st = strictness(dfa, p);
    char pct[16];
    std::snprintf(pct, sizeof pct, "%5.1f%%", 100.0 * Score::value(st));
    out << "P" << p << "  states " << dfa.phases[p].size() << "  bytes " << dfa.code_size[p] << "  allowed "
        << dfa.allowed[p].size() << "/" << dfa.alphabet.size() << " " << pct << "  {";
    bool first = true;
    for (auto s : dfa.allowed[p]) {
      out << (first ? "" : ",") << table.display_name(s);
      first = false;
    }
    out << "}\n";
  }
  out << "\ntransitions (labels from row phase to column phase)\n";
  std::size_t w = std::max<std::size_t>(3, std::to_string(n).size() + 2);
  auto cell = [&](const std::string& s) {
    out << std::string(w > s.size() ? w - s.size() : 1, ' ') << s;
  };
  cell("");
  for (std::size_t c = 0; c < n; ++c) cell("P" + std::to_string(c));
  out << "\n";
  for (std::size_t r = 0; r < n; ++r) {
    cell("P" + std::to_string(r));
    for (std::size_t c = 0; c < n; ++c) {
      auto it = matrix.find({r, c});
      cell(it == matrix.end() ? "." : std::to_string(it->second));
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace sysid
