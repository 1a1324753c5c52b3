#include <random>

#include "doctest.h"
#include "json.hpp"
#include "paths.hpp"
#include "sysid/error.hpp"
#include "sysid/pipeline.hpp"
#include "sysid/report.hpp"

using namespace sysid;
using namespace sysid::testing;

namespace {

SyscallSet range(std::uint64_t from, std::uint64_t to) {
  SyscallSet s;
  for (auto i = from; i < to; ++i) s.insert(i);
  return s;
}

}  // namespace

TEST_CASE("score with exact fractions") {
  // 15 reported, 10 observed, all observed ones reported.
  auto s = score(range(0, 15), range(0, 10));
  CHECK(s.precision == Ratio(2, 3));
  CHECK(s.recall == Ratio(1));
  CHECK(s.f1 == Ratio(4, 5));
  CHECK(s.false_negatives.empty());
  CHECK(s.false_positives == range(10, 15));
  CHECK(Score::value(s.f1) == doctest::Approx(0.8));
}

TEST_CASE("score edge cases") {
  auto none = score({}, {});
  CHECK(none.f1.numerator() == 0);
  auto miss = score({1}, {2});
  CHECK(miss.f1.numerator() == 0);
  CHECK(miss.false_negatives == SyscallSet{2});
  auto same = score({1, 2}, {1, 2});
  CHECK(same.f1 == Ratio(1));
}

TEST_CASE("f1 is symmetric and bounded") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 300; ++i) {
    SyscallSet a, t;
    for (int k = 0; k < 12; ++k) {
      if (rng() % 2) a.insert(rng() % 20);
      if (rng() % 2) t.insert(rng() % 20);
    }
    auto x = score(a, t), y = score(t, a);
    CHECK(x.f1 == y.f1);
    CHECK(x.precision == y.recall);
    CHECK(x.f1 >= Ratio(0));
    CHECK(x.f1 <= Ratio(1));
  }
}

TEST_CASE("trace formats") {
  auto raw = parse_trace_text(
      "execve(\"./a\", [\"./a\"], 0x7ffd) = 0\n"
      "[pid  4242] openat(AT_FDCWD, \"/etc\", O_RDONLY) = 3\n"
      "4243  12:00:01.000123 read(3, \"\", 4096) = 0\n"
      "+++ exited with 0 +++\n"
      "frobnicate(1) = -1 ENOSYS\n"
      "syscall_451(0) = 0\n",
      "raw");
  CHECK(raw.observed == SyscallSet{0, 59, 257, 451});
  CHECK(raw.unknown_names == std::vector<std::string>{"frobnicate"});

  auto summary = parse_trace_text(
      "% time     seconds  usecs/call     calls    errors syscall\n"
      "------ ----------- ----------- --------- --------- ----------------\n"
      " 60.00    0.000030          15         2           write\n"
      " 40.00    0.000020          20         1         1 close\n"
      "------ ----------- ----------- --------- --------- ----------------\n"
      "100.00    0.000050                     3         1 total\n",
      "summary");
  CHECK(summary.observed == SyscallSet{1, 3});

  auto bare = parse_trace_text("getpid\n\nexit\n", "bare");
  CHECK(bare.observed == SyscallSet{39, 60});
}

TEST_CASE("recorded traces parse") {
  auto g = parse_trace(fixture_dir() / "traces" / "imm_two_preds.args0.trace");
  CHECK(g.observed == SyscallSet{60, 102});
  CHECK_THROWS_AS(parse_trace(fixture_dir() / "traces" / "missing.trace"), Error);
}

TEST_CASE("profiles") {
  auto p = make_profile({60, 1}, true, {{1, {"exe"}}}, UnresolvedPolicy::Fail);
  CHECK(emit_profile(p, ProfileFormat::PlainList) == "write\nexit\n");
  auto oci = nlohmann::json::parse(emit_profile(p, ProfileFormat::OciSeccompJson));
  CHECK(oci["defaultAction"] == "SCMP_ACT_ERRNO");
  CHECK(oci["architectures"][0] == "SCMP_ARCH_X86_64");
  CHECK(oci["syscalls"][0]["names"] == nlohmann::json::array({"write", "exit"}));
  CHECK(oci["syscalls"][0]["action"] == "SCMP_ACT_ALLOW");
  p.default_action = DefaultAction::Kill;
  CHECK(nlohmann::json::parse(emit_profile(p, ProfileFormat::OciSeccompJson))["defaultAction"] ==
        "SCMP_ACT_KILL_PROCESS");
  CHECK(emit_profile(p, ProfileFormat::OciSeccompJson) == emit_profile(p, ProfileFormat::OciSeccompJson));
}

TEST_CASE("unresolved policies") {
  auto fail = make_profile({60}, false, {}, UnresolvedPolicy::Fail);
  try {
    emit_profile(fail, ProfileFormat::PlainList);
    FAIL("emitted an incomplete profile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnresolvedWithoutPolicy);
  }
  auto all = make_profile({60}, false, {}, UnresolvedPolicy::AllowAll);
  CHECK(all.allowed == SyscallTable::latest().all());
  auto listed = make_profile({60}, false, {}, UnresolvedPolicy::AllowListed, {39});
  CHECK(listed.allowed == SyscallSet{39, 60});
  auto complete = make_profile({60}, true, {}, UnresolvedPolicy::AllowAll);
  CHECK(complete.allowed == SyscallSet{60});
  CHECK(parse_unresolved_policy("allow-listed") == UnresolvedPolicy::AllowListed);
  CHECK_FALSE(parse_default_action("trap"));
}

TEST_CASE("diagnostic lines") {
  auto j = nlohmann::json::parse(
      diagnostic_json({Diagnostic::Severity::Warning, "unresolved-site", 0x401000, "still-symbolic"}));
  CHECK(j["severity"] == "warning");
  CHECK(j["code"] == "unresolved-site");
  CHECK(j["address"] == "0x401000");
  auto k = nlohmann::json::parse(diagnostic_json({Diagnostic::Severity::Error, "io", std::nullopt, "x"}));
  CHECK(k["address"].is_null());
}

TEST_CASE("analysis report") {
  AnalyzeOptions o;
  o.loader_baseline = false;
  auto a = analyze_program(fixture_bin("wrapper_six_users"), o);
  auto j = nlohmann::json::parse(analysis_report(a));
  CHECK(j["complete"] == true);
  CHECK(j["sites"].size() == 2);
  CHECK(j["wrappers"][0]["function"] == "my_syscall");
  CHECK(j["wrappers"][0]["param"] == "rdi");
  CHECK(analysis_report(a) == analysis_report(analyze_program(fixture_bin("wrapper_six_users"), o)));
}

TEST_CASE("phase report") {
  SyscallNfa nfa;
  for (int i = 0; i < 3; ++i) nfa.add_state(0x1000 + 0x10 * i, 16);
  nfa.add(0, 0, 1);
  nfa.add(1, 1, 2);
  auto dfa = back_propagate(merge_phases(determinize(nfa), nfa, 1.0));
  CHECK(strictness(dfa, 0) == Ratio(1));
  CHECK(strictness(dfa, 1) == Ratio(1, 2));
  auto j = nlohmann::json::parse(phase_report(dfa, true, true));
  CHECK(j["phases"].size() == 3);
  CHECK(j["phases"][1]["strictness"] == "1/2");
  CHECK(j["back_propagated"] == true);
  auto text = phase_report(dfa, false, true);
  CHECK(text.find("P1") != std::string::npos);
  CHECK(text.find("write") != std::string::npos);
}
