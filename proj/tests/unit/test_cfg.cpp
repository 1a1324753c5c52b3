#include <algorithm>

#include "doctest.h"
#include "paths.hpp"
#include "sysid/cfg.hpp"

using namespace sysid;
using sysid::testing::fixture_bin;

namespace {

std::shared_ptr<const BinaryImage> image(const char* name) {
  return std::make_shared<const BinaryImage>(load_binary(fixture_bin(name)));
}

std::set<Edge> edge_set(const Cfg& cfg) {
  std::set<Edge> out;
  for (const auto& e : cfg.edges) out.insert({e.src, e.dst, e.kind});
  return out;
}

void check_invariants(const Cfg& cfg) {
  for (const auto& e : cfg.edges) {
    CHECK(cfg.blocks.count(e.src));
    CHECK(cfg.blocks.count(e.dst));
    if (e.kind == EdgeKind::IndirectResolved && !cfg.jump_table_targets.count(e.src)) {
      CHECK(cfg.active_addresses_taken.count(e.dst));
    }
  }
  std::set<Addr> taken;
  for (Addr b : cfg.reachable_from_entries()) {
    const auto& at = cfg.blocks.at(b).addresses_taken_here;
    taken.insert(at.begin(), at.end());
  }
  CHECK(std::includes(taken.begin(), taken.end(), cfg.active_addresses_taken.begin(),
                      cfg.active_addresses_taken.end()));
  std::set<Addr> owned;
  for (const auto& f : cfg.functions) {
    CHECK(f.blocks.count(f.entry));
    for (Addr b : f.blocks) CHECK(owned.insert(b).second);
  }
}

}  // namespace

TEST_CASE("single block exit") {
  auto cfg = build_base_cfg(image("exit_only"));
  CHECK(cfg.blocks.size() == 1);
  CHECK(cfg.unresolved_indirects.empty());
  CHECK(reachable_syscall_sites(cfg).size() == 1);
  check_invariants(cfg);
}

TEST_CASE("diamond of two definitions") {
  auto cfg = build_cfg(image("imm_two_preds"));
  CHECK(cfg.blocks.size() == 4);
  CHECK(cfg.edges.size() == 4);
  check_invariants(cfg);
}

TEST_CASE("indirect call before the fixpoint") {
  auto cfg = build_base_cfg(image("indirect_call"));
  REQUIRE(cfg.unresolved_indirects.size() == 1);
  Addr b = *cfg.unresolved_indirects.begin();
  for (const auto& e : cfg.out_edges(b)) CHECK(e.kind != EdgeKind::IndirectResolved);
}

TEST_CASE("two-round fixpoint edge set") {
  auto cfg = build_cfg(image("at_two_rounds"));
  // Blocks from the disassembly: A=0x401000 (lea f; call *rax), A'=0x401009
  // (exit), F=0x401013 (lea g; call *rcx), F'=0x40101c (ret), G=0x40101d.
  // Round 1 activates f; f becomes reachable and round 2 activates g.
  std::set<Edge> want = {
      {0x401000, 0x401009, EdgeKind::Fallthrough},      {0x401000, 0x401013, EdgeKind::IndirectResolved},
      {0x401000, 0x40101d, EdgeKind::IndirectResolved}, {0x401013, 0x401013, EdgeKind::IndirectResolved},
      {0x401013, 0x40101c, EdgeKind::Fallthrough},      {0x401013, 0x40101d, EdgeKind::IndirectResolved},
      {0x40101c, 0x401009, EdgeKind::ReturnTo},         {0x40101c, 0x40101c, EdgeKind::ReturnTo},
      {0x40101d, 0x401009, EdgeKind::ReturnTo},         {0x40101d, 0x40101c, EdgeKind::ReturnTo},
  };
  CHECK(edge_set(cfg) == want);
  CHECK(cfg.active_addresses_taken == std::set<Addr>{0x401013, 0x40101d});
  CHECK(resolve_active_addresses_taken(cfg) == cfg);
  check_invariants(cfg);
}

TEST_CASE("address taken in dead code stays inactive") {
  auto cfg = build_cfg(image("at_dead"));
  CHECK(cfg.active_addresses_taken.size() == 1);
  auto img = cfg.image;
  auto dead = std::find_if(img->symbols.begin(), img->symbols.end(), [](const auto& s) { return s.name == "dead_target"; });
  REQUIRE(dead != img->symbols.end());
  CHECK_FALSE(cfg.active_addresses_taken.count(dead->address));
  for (const auto& e : cfg.edges) CHECK(e.dst != dead->address);
  check_invariants(cfg);
}

TEST_CASE("function pointer through data reaches its target") {
  auto cfg = build_cfg(image("indirect_call"));
  auto img = cfg.image;
  auto handler = std::find_if(img->symbols.begin(), img->symbols.end(), [](const auto& s) { return s.name == "handler"; });
  REQUIRE(handler != img->symbols.end());
  Addr call_block = *build_base_cfg(img).unresolved_indirects.begin();
  CHECK(cfg.has_edge(call_block, handler->address, EdgeKind::IndirectResolved));
  check_invariants(cfg);
}

TEST_CASE("no addresses taken leaves the graph alone") {
  auto base = build_base_cfg(image("imm_same_block"));
  auto fixed = resolve_active_addresses_taken(base);
  CHECK(fixed.active_addresses_taken.empty());
  CHECK(edge_set(fixed) == edge_set(base));
}

TEST_CASE("dead syscall is not a site") {
  auto cfg = build_cfg(image("dead_syscall"));
  CHECK(reachable_syscall_sites(cfg).size() == 1);
}

TEST_CASE("library sites reachable from the called exports") {
  auto cfg = build_cfg(image("libcstub.so"));
  CHECK(reachable_syscall_sites(cfg).size() == 3);
  // dyn_cstub calls c_getpid and c_getuid only
  cfg.entry_nodes = {cfg.image->exported.at("c_getpid"), cfg.image->exported.at("c_getuid")};
  CHECK(reachable_syscall_sites(cfg).size() == 2);
}

TEST_CASE("jump tables") {
  auto cfg = build_cfg(image("jumptable"));
  REQUIRE(cfg.jump_table_targets.size() == 2);
  std::vector<std::size_t> sizes;
  for (const auto& [b, t] : cfg.jump_table_targets) sizes.push_back(t.size());
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 3});
  CHECK(reachable_syscall_sites(cfg).size() == 4);
  check_invariants(cfg);
}

TEST_CASE("stripped binary uses unwind ranges for functions") {
  auto cfg = build_cfg(image("stripped_cfi"));
  CHECK(cfg.functions.size() == 3);
  CHECK(reachable_syscall_sites(cfg).size() == 3);
  check_invariants(cfg);
}

TEST_CASE("undecodable bytes poison the function") {
  auto cfg = build_cfg(image("poison"));
  CHECK(std::any_of(cfg.functions.begin(), cfg.functions.end(), [](const auto& f) { return f.poisoned; }));
  CHECK(std::any_of(cfg.diagnostics.begin(), cfg.diagnostics.end(),
                    [](const auto& d) { return d.code == "decode-failure"; }));
  check_invariants(cfg);
}

TEST_CASE("edge dump is sorted text") {
  auto text = dump_edges(build_cfg(image("at_two_rounds")));
  CHECK(text.find("0x401000 -> 0x401013 indirect-resolved\n") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 10);
}

TEST_CASE("construction is deterministic") {
  CHECK(build_cfg(image("jumptable")) == build_cfg(image("jumptable")));
}
