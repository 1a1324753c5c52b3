#include <fstream>

#include "doctest.h"
#include "paths.hpp"
#include "sysid/error.hpp"
#include "sysid/fixtures.hpp"
#include "sysid/report.hpp"

using namespace sysid;
using namespace sysid::testing;
namespace fs = std::filesystem;

TEST_CASE("every scenario has a fixture") {
  auto all = load_manifests(manifest_dir());
  CHECK(all.size() >= 10);
  CHECK(missing_scenarios(all).empty());
}

TEST_CASE("every fixture verifies") {
  for (const auto& m : load_manifests(manifest_dir())) {
    CAPTURE(m.name);
    auto a = analyze_program(m.binary, analyze_options(m));
    auto v = verify_fixture(m, a);
    INFO(v.summary(m.name));
    CHECK(v.pass);
  }
}

TEST_CASE("traces agree with the expected sets") {
  for (const auto& m : load_manifests(manifest_dir())) {
    CAPTURE(m.name);
    SyscallSet seen;
    for (const auto& t : m.traces) {
      auto g = parse_trace(t);
      CHECK(g.unknown_names.empty());
      seen.insert(g.observed.begin(), g.observed.end());
    }
    if (m.traces_exhaustive) {
      CHECK_FALSE(m.traces.empty());
      CHECK(seen == m.expected_syscalls);
    } else {
      CHECK(std::includes(m.expected_syscalls.begin(), m.expected_syscalls.end(), seen.begin(), seen.end()));
    }
    CHECK(fs::exists(m.binary));
  }
}

TEST_CASE("verdicts") {
  auto m = load_manifest(manifest_dir() / "imm_two_preds.json");
  auto a = analyze_program(m.binary, analyze_options(m));
  CHECK(verify_fixture(m, a).pass);
  auto fewer = a;
  fewer.syscalls.erase(39);
  auto v = verify_fixture(m, fewer);
  CHECK_FALSE(v.pass);
  CHECK(v.missing == SyscallSet{39});
  auto more = a;
  more.syscalls.insert(500);
  auto w = verify_fixture(m, more);
  CHECK(w.pass);
  CHECK(w.fp_count() == 1);
  auto incomplete = a;
  incomplete.complete = false;
  CHECK_FALSE(verify_fixture(m, incomplete).pass);
}

TEST_CASE("malformed manifests") {
  auto dir = fs::temp_directory_path() / ("sysid-manifest-" + std::to_string(::getpid()));
  fs::create_directories(dir / "manifests");
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "manifests" / "m.json") << text;
    return dir / "manifests" / "m.json";
  };
  auto throws_invalid = [](const fs::path& p) {
    try {
      load_manifest(p);
      return false;
    } catch (const Error& e) {
      return e.code() == ErrorCode::InvalidArgument;
    }
  };
  CHECK(throws_invalid(write("[")));
  CHECK(throws_invalid(write(R"({"name":"x","scenario":"nope","binary":"bin/x","expected_syscalls":[]})")));
  CHECK(throws_invalid(write(R"({"name":"x","scenario":"fig1A","binary":"bin/x","expected_syscalls":["bogus_call"]})")));
  auto ok = load_manifest(write(R"({"name":"x","scenario":"fig1A","binary":"bin/x","expected_syscalls":["exit", 39]})"));
  CHECK(ok.expected_syscalls == SyscallSet{39, 60});
  CHECK(ok.binary == dir / "bin" / "x");
  fs::remove_all(dir);
}
