#include <filesystem>

#include "doctest.h"
#include "paths.hpp"
#include "sysid/error.hpp"
#include "sysid/pipeline.hpp"
#include "sysid/shared_iface.hpp"

using namespace sysid;
using namespace sysid::testing;
namespace fs = std::filesystem;

namespace {

SharedInterface lib(const std::string& name) {
  return analyze_library(fixture_bin(name), {}, {fixture_dir() / "bin"});
}

AnalyzeOptions no_loader() {
  AnalyzeOptions o;
  o.loader_baseline = false;
  return o;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sysid-iface-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

}  // namespace

TEST_CASE("stub library interface") {
  auto iface = lib("libstub.so");
  CHECK(iface.library == "libstub.so");
  CHECK(iface.symbols.size() == 2);
  CHECK(iface.func_graph.at(iface.symbols.at("stub_write")).syscalls == SyscallSet{1});
  CHECK(iface.func_graph.at(iface.symbols.at("stub_getpid")).syscalls == SyscallSet{39});
  CHECK(iface.unresolved_sites.empty());
  CHECK(iface.wrappers.empty());
  CHECK(iface.interface_id == file_content_hash(fixture_bin("libstub.so")));
}

TEST_CASE("exported wrapper") {
  auto iface = lib("libwrap.so");
  Addr w = iface.symbols.at("lw_syscall");
  CHECK(iface.wrappers == std::vector<Addr>{w});
  CHECK(iface.wrapper_params.at(w) == ParamLocation::in_register(Gpr::Rdi));
  Addr close = iface.symbols.at("lw_close");
  CHECK(iface.func_graph.at(close).callees.count(w));
  CHECK(iface.func_graph.at(close).syscalls == SyscallSet{3});
}

TEST_CASE("serialization is canonical") {
  auto a = lib("libdag_left.so");
  auto b = lib("libdag_left.so");
  CHECK(a == b);
  CHECK(to_json(a) == to_json(b));
  CHECK(interface_from_json(to_json(a)) == a);
  CHECK(a.external_refs.size() == 1);
  CHECK(interface_file_name("libc.so.6") == "libc.so.6.iface.json");
}

TEST_CASE("malformed interface documents") {
  CHECK_THROWS_AS(interface_from_json("not json"), Error);
  CHECK_THROWS_AS(interface_from_json("{}"), Error);
  auto text = to_json(lib("libstub.so"));
  const std::string key = "\"schema_version\": 1";
  auto pos = text.find(key);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, key.size(), "\"schema_version\": 99");
  try {
    interface_from_json(text);
    FAIL("accepted an unknown schema version");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InterfaceFormat);
  }
}

TEST_CASE("dependency diamond") {
  auto dag = build_dep_dag("main", {"left", "right"}, {{"left", {"base"}}, {"right", {"base"}}, {"base", {}}});
  CHECK(dag.nodes.front() == "main");
  CHECK(dag.order.back() == "main");
  CHECK(dag.order.front() == "base");
  CHECK(dag.edges.count({"left", "base"}));
  CHECK(dag.edges.count({"main", "right"}));
  CHECK(dag.search_order == std::vector<std::string>{"left", "right", "base"});
}

TEST_CASE("needed cycle becomes one node") {
  auto dag = build_dep_dag("main", {"a"}, {{"a", {"b"}}, {"b", {"a"}}});
  CHECK(dag.members.count("a+b"));
  CHECK(std::find(dag.order.begin(), dag.order.end(), "a+b") != dag.order.end());
}

TEST_CASE("diamond program links through both sides") {
  auto a = analyze_program(fixture_bin("dag_main"), no_loader());
  CHECK(a.syscalls == SyscallSet{39, 60, 102, 107});
  CHECK(a.complete);
  REQUIRE(a.link);
  CHECK(a.link->import_syscalls.at("left_op") == SyscallSet{39, 102});
  CHECK(a.link->import_syscalls.at("right_op") == SyscallSet{39, 107});
  CHECK(a.provenance.at(39).size() >= 1);
}

TEST_CASE("wrapper exported by a library") {
  auto a = analyze_program(fixture_bin("dyn_wrap"), no_loader());
  CHECK(a.syscalls == SyscallSet{3, 39, 60, 102});
  CHECK(a.complete);
}

TEST_CASE("loader baseline") {
  auto base = default_loader_baseline();
  CHECK_FALSE(base.empty());
  auto with = analyze_program(fixture_bin("dyn_stub"));
  for (auto n : base) CHECK(with.syscalls.count(n));
  auto static_exe = analyze_program(fixture_bin("exit_only"));
  CHECK(static_exe.syscalls == SyscallSet{60});
}

TEST_CASE("missing interfaces are named") {
  auto img = fixture_image("dag_main");
  auto cfg = build_cfg(img);
  auto ident = identify_program(cfg);
  try {
    link_and_resolve(cfg, ident, {});
    FAIL("linked without interfaces");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingInterface);
    CHECK(std::string(e.what()).find("libdag_left.so") != std::string::npos);
  }
}

TEST_CASE("run-time modules") {
  auto base = analyze_program(fixture_bin("exit_only"), no_loader());
  auto o = no_loader();
  o.dlopen_libs = {fixture_bin("libmod_sock.so")};
  auto with = analyze_program(fixture_bin("exit_only"), o);
  CHECK(with.syscalls == SyscallSet{41, 60});
  CHECK(with.complete);
  o.dlopen_libs = {};
  CHECK(analyze_program(fixture_bin("exit_only"), o).syscalls == base.syscalls);
  o.dlopen_libs = {fixture_bin("libmod_unres.so")};
  auto unres = analyze_program(fixture_bin("exit_only"), o);
  CHECK_FALSE(unres.complete);
}

TEST_CASE("cached interfaces give the same result") {
  TempDir dir;
  auto o = no_loader();
  o.iface_dir = dir.path;
  o.write_interfaces = true;
  auto first = analyze_program(fixture_bin("dag_main"), o);
  CHECK(first.interface_origin.at("libdag_base.so") == "analyzed");
  CHECK(fs::exists(dir.path / "libdag_base.so.iface.json"));
  o.write_interfaces = false;
  auto second = analyze_program(fixture_bin("dag_main"), o);
  CHECK(second.interface_origin.at("libdag_base.so") == "cache");
  CHECK(second.syscalls == first.syscalls);
  CHECK(second.interfaces == first.interfaces);
}

TEST_CASE("library search") {
  auto img = fixture_image("dyn_stub");
  auto dirs = library_search_dirs(*img, {});
  REQUIRE_FALSE(dirs.empty());
  CHECK(fs::equivalent(dirs.front(), fixture_dir() / "bin"));
  CHECK(find_library("libstub.so", dirs));
  CHECK_FALSE(find_library("libdoes_not_exist.so", dirs));
}
