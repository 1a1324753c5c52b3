#include "doctest.h"
#include "paths.hpp"
#include "sysid/syscall_id.hpp"

using namespace sysid;
using namespace sysid::testing;

namespace {

IdentifyOptions opts(bool heuristic = true) {
  IdentifyOptions o;
  o.wrapper_heuristic = heuristic;
  return o;
}

const SyscallSite& site_in(const ProgramIdentification& id, const Cfg& cfg, const std::string& func) {
  Addr f = symbol_address(*cfg.image, func);
  for (const auto& [a, s] : id.sites) {
    if (s.function == f) return s;
  }
  throw std::runtime_error("no site in " + func);
}

}  // namespace

TEST_CASE("parameter locations") {
  CHECK(to_string(ParamLocation::in_register(Gpr::Rdi)) == "rdi");
  CHECK(to_string(ParamLocation::on_stack(8)) == "stack+8");
  CHECK(parse_param_location("stack+16") == ParamLocation::on_stack(16));
  CHECK(parse_param_location("rsi") == ParamLocation::in_register(Gpr::Rsi));
  CHECK_FALSE(parse_param_location("stack-8"));
  CHECK_FALSE(parse_param_location("xmm0"));
}

TEST_CASE("local definitions are not wrappers") {
  auto cfg = build_cfg(fixture_image("imm_same_block"));
  const auto& f = *cfg.function_at(symbol_address(*cfg.image, "_start"));
  for (Addr site : reachable_syscall_sites(cfg)) {
    CHECK(rax_defined_locally(cfg, f, site));
    auto d = detect_wrapper(cfg, f, site);
    CHECK(d.kind == WrapperDecision::Kind::NotWrapper);
    CHECK(d.evidence == WrapperEvidence::UdchainOnlyNegative);
  }
}

TEST_CASE("register wrapper") {
  auto cfg = build_cfg(fixture_image("wrapper_reg"));
  Addr w = symbol_address(*cfg.image, "my_syscall");
  auto d = detect_wrapper(cfg, *cfg.function_at(w), reachable_syscall_sites(cfg).front());
  REQUIRE(d.is_wrapper());
  CHECK(d.wrapper->function == w);
  CHECK(d.wrapper->param_location == ParamLocation::in_register(Gpr::Rdi));
  CHECK(d.wrapper->confirmed_by == WrapperEvidence::SymbolicConfirmed);
  auto id = identify_program(cfg, opts());
  CHECK(id.syscalls == SyscallSet{1, 3, 60});
  CHECK(id.complete);
  const auto& s = site_in(id, cfg, "my_syscall");
  CHECK(s.in_wrapper);
  CHECK(s.by_function.at(symbol_address(*cfg.image, "_start")) == SyscallSet{1, 3, 60});
}

TEST_CASE("stack wrapper") {
  auto cfg = build_cfg(fixture_image("wrapper_stack"));
  auto id = identify_program(cfg, opts());
  REQUIRE(id.wrappers.size() == 1);
  CHECK(id.wrappers.begin()->second.param_location == ParamLocation::on_stack(8));
  CHECK(id.syscalls == SyscallSet{39, 60, 102});
}

TEST_CASE("wrapper callers limited to reachable code") {
  auto cfg = build_cfg(fixture_image("wrapper_six_users"));
  auto on = identify_program(cfg, opts(true));
  const auto& ws = site_in(on, cfg, "my_syscall");
  CHECK(ws.numbers == SyscallSet{39, 102});
  CHECK(ws.by_function.count(symbol_address(*cfg.image, "use_getpid")));
  CHECK(ws.by_function.count(symbol_address(*cfg.image, "use_getuid")));
  CHECK(on.syscalls == SyscallSet{39, 60, 102});

  auto off = identify_program(cfg, opts(false));
  const auto& ps = site_in(off, cfg, "my_syscall");
  CHECK_FALSE(ps.in_wrapper);
  CHECK(ps.numbers == SyscallSet{39, 102, 104, 107, 108, 110});
  CHECK(off.wrappers.empty());
}

TEST_CASE("two candidate parameters") {
  auto cfg = build_cfg(fixture_image("wrapper_ambig"));
  Addr f = symbol_address(*cfg.image, "pick_syscall");
  Addr site = cfg.function_at(f)->contains_syscall_sites.front();
  CHECK(detect_wrapper(cfg, *cfg.function_at(f), site).kind == WrapperDecision::Kind::Ambiguous);
  auto id = identify_program(cfg, opts());
  CHECK_FALSE(id.complete);
  CHECK(id.unresolved_sites == std::vector<Addr>{site});
  CHECK(id.syscalls == SyscallSet{60});
}

TEST_CASE("backward search stops at the defining blocks") {
  auto cfg = build_cfg(fixture_image("backward_frontier"));
  Addr site = reachable_syscall_sites(cfg).front();
  auto r = backward_search(cfg, site, Query::reg_query(Gpr::Rax), opts());
  CHECK(r.numbers == SyscallSet{0, 2});
  CHECK_FALSE(r.unresolved);
  auto id = identify_program(cfg, opts());
  CHECK(id.syscalls == SyscallSet{0, 2, 60});
}

TEST_CASE("number from memory stays unresolved") {
  auto cfg = build_cfg(fixture_image("global_number"));
  auto id = identify_program(cfg, opts());
  CHECK_FALSE(id.complete);
  CHECK(id.unresolved_sites.size() == 1);
  CHECK(id.syscalls == SyscallSet{60});
  const auto& s = id.sites.at(id.unresolved_sites.front());
  CHECK(s.unresolved);
  CHECK(s.numbers.empty());
}

TEST_CASE("fixture programs") {
  struct Case {
    const char* name;
    SyscallSet want;
  } cases[] = {
      {"exit_only", {60}}, {"imm_same_block", {1, 60}},     {"imm_two_preds", {39, 60, 102}},
      {"imm_stack_slot", {0, 60}},  {"at_two_rounds", {39, 60}},     {"dead_syscall", {60}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto id = identify_program(build_cfg(fixture_image(c.name)), opts());
    CHECK(id.syscalls == c.want);
    CHECK(id.complete);
  }
}

TEST_CASE("parallel identification matches serial") {
  auto cfg = build_cfg(fixture_image("phases_server"));
  auto serial = identify_program(cfg, opts());
  auto o = opts();
  o.jobs = 4;
  auto parallel = identify_program(cfg, o);
  CHECK(serial.sites == parallel.sites);
  CHECK(serial.syscalls == parallel.syscalls);
}
