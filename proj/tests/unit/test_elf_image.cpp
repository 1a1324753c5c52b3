#include <algorithm>

#include "doctest.h"
#include "paths.hpp"
#include "sysid/elf_image.hpp"
#include "sysid/error.hpp"
#include "sysid/syscall_table.hpp"

using namespace sysid;
using sysid::testing::fixture_bin;

namespace {

ErrorCode load_error(std::vector<std::uint8_t> bytes) {
  try {
    parse_binary(bytes, "mem");
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("static executable") {
  auto img = load_binary(fixture_bin("exit_only"));
  CHECK(img.kind == BinaryKind::StaticExec);
  CHECK(img.dyn_deps.empty());
  // readelf -h / -S: entry 0x401000, .text at 0x401000 of 10 bytes
  CHECK(img.entry_point == 0x401000);
  CHECK(img.in_code(img.entry_point));
  CHECK(list_entry_points(img) == std::vector<Addr>{0x401000});
}

TEST_CASE("dynamic executable with one stub library") {
  auto img = load_binary(fixture_bin("dyn_stub"));
  CHECK(img.kind == BinaryKind::DynamicExec);
  // readelf -d: NEEDED libstub.so, RUNPATH $ORIGIN; .plt at 0x401000 (PLT0 + one stub)
  CHECK(img.dyn_deps == std::vector<std::string>{"libstub.so"});
  CHECK(img.runpath == std::vector<std::string>{"$ORIGIN"});
  REQUIRE(img.plt_map.count("stub_write"));
  CHECK(img.plt_map.at("stub_write") == 0x401010);
  CHECK(img.in_code(img.plt_map.at("stub_write")));
  CHECK(img.entry_point == 0x401020);
  CHECK(img.interpreter == "/lib64/ld-linux-x86-64.so.2");
}

TEST_CASE("dependencies keep link order") {
  auto img = load_binary(fixture_bin("dag_main"));
  CHECK(img.dyn_deps == std::vector<std::string>{"libdag_left.so", "libdag_right.so"});
}

TEST_CASE("shared object exports and entry points") {
  auto img = load_binary(fixture_bin("libstub.so"));
  CHECK(img.kind == BinaryKind::SharedObject);
  CHECK(img.soname == "libstub.so");
  // readelf --dyn-syms: stub_write 0x1000, stub_getpid 0x1008
  CHECK(img.exported == std::map<std::string, Addr>{{"stub_getpid", 0x1008}, {"stub_write", 0x1000}});
  CHECK(list_entry_points(img) == std::vector<Addr>{0x1000, 0x1008});
}

TEST_CASE("code ranges are sorted and disjoint") {
  for (auto name : {"exit_only", "dyn_stub", "libcstub.so", "stripped_cfi", "jumptable"}) {
    auto img = load_binary(fixture_bin(name));
    for (std::size_t i = 1; i < img.code_ranges.size(); ++i) {
      CHECK(img.code_ranges[i - 1].end() <= img.code_ranges[i].start);
    }
    for (const auto& [sym, addr] : img.plt_map) CHECK(img.in_code(addr));
  }
}

TEST_CASE("loading is deterministic") {
  CHECK(load_binary(fixture_bin("dyn_wrap")) == load_binary(fixture_bin("dyn_wrap")));
}

TEST_CASE("symbols carry function flags") {
  auto img = load_binary(fixture_bin("at_two_rounds"));
  auto it = std::find_if(img.symbols.begin(), img.symbols.end(), [](const auto& s) { return s.name == "func_f"; });
  REQUIRE(it != img.symbols.end());
  CHECK(it->address == 0x401013);
  CHECK(it->size == 10);
  CHECK(it->is_function);
  CHECK_FALSE(it->is_exported);
}

TEST_CASE("stripped binary falls back to unwind ranges") {
  auto img = load_binary(fixture_bin("stripped_cfi"));
  CHECK(std::none_of(img.symbols.begin(), img.symbols.end(), [](const auto& s) { return s.is_function; }));
  CHECK(img.unwind_ranges.size() >= 2);
}

TEST_CASE("malformed input") {
  auto bytes = read_file(fixture_bin("exit_only"));
  CHECK(load_error({bytes.begin(), bytes.begin() + 16}) == ErrorCode::MalformedHeaders);
  CHECK(load_error({'h', 'e', 'l', 'l', 'o'}) == ErrorCode::NotElf);
  auto elf32 = bytes;
  elf32[4] = 1;  // EI_CLASS = ELFCLASS32
  CHECK(load_error(elf32) == ErrorCode::UnsupportedClass);
  auto arm = bytes;
  arm[18] = 183;  // e_machine = EM_AARCH64
  arm[19] = 0;
  CHECK(load_error(arm) == ErrorCode::UnsupportedMachine);
}

TEST_CASE("content hash follows the bytes") {
  auto a = read_file(fixture_bin("exit_only"));
  auto b = a;
  b.back() ^= 1;
  CHECK(content_hash(a) == file_content_hash(fixture_bin("exit_only")));
  CHECK(content_hash(a) != content_hash(b));
  // FNV-1a reference values
  CHECK(content_hash({}) == 0xcbf29ce484222325ull);
  std::vector<std::uint8_t> one{'a'};
  CHECK(content_hash(one) == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("syscall table") {
  const auto& t = SyscallTable::latest();
  CHECK(t.name(60) == "exit");
  CHECK(t.number("openat") == 257u);
  CHECK_FALSE(t.number("bogus_call"));
  CHECK(t.max_number() <= 547);
  auto tags = SyscallTable::available_tags();
  CHECK(tags.size() >= 2);
  CHECK(SyscallTable::for_kernel("5.15").number("read") == 0u);
  CHECK_THROWS_AS(SyscallTable::for_kernel("1.0"), Error);
}
