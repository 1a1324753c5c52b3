#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "paths.hpp"
#include "sysid/cli.hpp"

using namespace sysid;
using namespace sysid::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string bin(const char* name) { return fixture_bin(name).string(); }
std::string trace(const char* name) { return (fixture_dir() / "traces" / name).string(); }

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"analyze"}).code == kExitUsage);
  CHECK(run({"analyze", "/no/such/file"}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"phases", bin("imm_same_block"), "--tau", "1.5"}).code == kExitUsage);
  CHECK(run({"--kernel", "1.0", "analyze", bin("imm_same_block")}).code == kExitUsage);
  auto help = run({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("analyze") != std::string::npos);
}

TEST_CASE("analyze") {
  auto r = run({"analyze", bin("imm_two_preds")});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "getpid\nexit\ngetuid\n");
  auto oci = run({"analyze", "--format", "oci", "--default-action", "log", bin("exit_only")});
  CHECK(nlohmann::json::parse(oci.out)["defaultAction"] == "SCMP_ACT_LOG");
  CHECK(run({"--kernel", "5.15", "analyze", bin("exit_only")}).out == "exit\n");
}

TEST_CASE("unresolved sites and policies") {
  auto fail = run({"analyze", bin("global_number")});
  CHECK(fail.code == kExitFailure);
  CHECK(fail.out.empty());
  CHECK(fail.err.find("unresolved") != std::string::npos);
  auto listed = run({"--json", "analyze", "--unresolved-policy", "allow-listed", "--allow", "getpid",
                     bin("global_number")});
  CHECK(listed.code == kExitOk);
  CHECK(listed.out == "getpid\nexit\n");
  auto first_line = listed.err.substr(0, listed.err.find('\n'));
  CHECK(nlohmann::json::parse(first_line)["code"] == "unresolved-site");
  CHECK(run({"analyze", "--unresolved-policy", "allow-listed", "--allow", "bogus", bin("global_number")}).code ==
        kExitUsage);
}

TEST_CASE("compare") {
  auto ok = run({"compare", bin("imm_two_preds"), "--trace", trace("imm_two_preds.args0.trace"), "--format", "json"});
  CHECK(ok.code == kExitOk);
  auto j = nlohmann::json::parse(ok.out);
  CHECK(j["precision"] == "2/3");
  CHECK(j["recall"] == "1/1");
  CHECK(j["f1"] == "4/5");
  auto text = run({"compare", bin("exit_only"), "--trace", trace("imm_two_preds.args0.trace")});
  CHECK(text.code == kExitFailure);
  CHECK(text.out.find("false negatives 1") != std::string::npos);
  CHECK(run({"compare", bin("imm_two_preds"), "--trace", "/no/trace"}).code == kExitUsage);
}

TEST_CASE("phases") {
  auto r = run({"phases", "--format", "json", bin("phases_chain")});
  CHECK(r.code == kExitOk);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["alphabet"].size() == 3);
  CHECK(run({"phases", bin("global_number")}).code == kExitFailure);
  CHECK(run({"phases", "--allow-unresolved", bin("global_number")}).code == kExitOk);
}

TEST_CASE("interface and cfg dump") {
  auto i = run({"interface", bin("libstub.so")});
  CHECK(i.code == kExitOk);
  CHECK(nlohmann::json::parse(i.out)["library"] == "libstub.so");
  auto d = run({"dump-cfg", bin("at_two_rounds")});
  CHECK(d.out.find("0x401000 -> 0x401013 indirect-resolved") != std::string::npos);
}

TEST_CASE("config file and output file") {
  auto dir = fs::temp_directory_path() / ("sysid-cli-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"no-loader-baseline": true, "analyze": {"format": "oci"}})";
  auto out = (dir / "p.json").string();
  auto r = run({"--config", (dir / "c.json").string(), "-o", out, "analyze", bin("dyn_stub")});
  CHECK(r.code == kExitOk);
  std::ifstream f(out);
  auto j = nlohmann::json::parse(f);
  CHECK(j["syscalls"][0]["names"] == nlohmann::json::array({"write", "exit"}));
  fs::remove_all(dir);
}
