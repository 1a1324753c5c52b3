#include <random>

#include "doctest.h"
#include "paths.hpp"
#include "sysid/lifter.hpp"
#include "sysid/symexec.hpp"

using namespace sysid;

namespace {

std::vector<MicroOp> lift_bytes(std::vector<std::uint8_t> bytes, Addr at = 0x1000) {
  auto dec = make_decoder();
  std::vector<MicroOp> out;
  std::span<const std::uint8_t> rest(bytes);
  while (!rest.empty()) {
    auto insn = dec->decode(rest, at);
    REQUIRE(insn);
    auto ops = lift_instruction(*insn);
    out.insert(out.end(), ops.begin(), ops.end());
    rest = rest.subspan(insn->length);
    at += insn->length;
  }
  return out;
}

bool writes_register(const MicroOp& op, Gpr g) {
  switch (op.kind) {
    case OpKind::WriteRegConst:
    case OpKind::CopyRegReg:
    case OpKind::LoadEffectiveAddress:
    case OpKind::LoadStack:
    case OpKind::LoadUnknown:
    case OpKind::ArithImm:
    case OpKind::HavocReg:
    case OpKind::Pop:
      if (op.dst.reg == g) return true;
      break;
    default:
      break;
  }
  if (g != Gpr::Rsp) return false;
  return op.kind == OpKind::Push || op.kind == OpKind::Pop || op.kind == OpKind::CallDirect ||
         op.kind == OpKind::CallIndirect || op.kind == OpKind::Return;
}

}  // namespace

TEST_CASE("32-bit immediate then syscall") {
  auto ops = lift_bytes({0xb8, 0x01, 0x00, 0x00, 0x00, 0x0f, 0x05});
  REQUIRE(ops.size() == 2);
  CHECK(ops[0].kind == OpKind::WriteRegConst);
  CHECK(ops[0].dst == RegRef{Gpr::Rax, Width::W32});
  CHECK(ops[0].imm == 1);
  CHECK(ops[1].kind == OpKind::Syscall);
}

TEST_CASE("stack round trip") {
  // mov %rdi,-8(%rsp); mov -8(%rsp),%rax; syscall
  auto ops = lift_bytes({0x48, 0x89, 0x7c, 0x24, 0xf8, 0x48, 0x8b, 0x44, 0x24, 0xf8, 0x0f, 0x05});
  REQUIRE(ops.size() == 3);
  CHECK(ops[0].kind == OpKind::StoreStack);
  CHECK(ops[0].slot == StackRef{StackBase::Rsp, -8});
  CHECK(ops[0].source == ValueSource::Reg);
  CHECK(ops[0].src.reg == Gpr::Rdi);
  CHECK(ops[1].kind == OpKind::LoadStack);
  CHECK(ops[1].dst.reg == Gpr::Rax);
  CHECK(ops[1].slot == StackRef{StackBase::Rsp, -8});
  CHECK(ops[2].kind == OpKind::Syscall);
}

TEST_CASE("self xor is a zero constant") {
  auto ops = lift_bytes({0x31, 0xc0});
  REQUIRE(ops.size() == 1);
  CHECK(ops[0].kind == OpKind::WriteRegConst);
  CHECK(ops[0].imm == 0);
}

TEST_CASE("global memory is not a stack slot") {
  // mov 0x10(%rip),%eax
  auto ops = lift_bytes({0x8b, 0x05, 0x10, 0x00, 0x00, 0x00});
  REQUIRE(ops.size() == 1);
  CHECK(ops[0].kind == OpKind::LoadUnknown);
}

TEST_CASE("lea of a code address is an address taken") {
  auto img = load_binary(sysid::testing::fixture_bin("at_two_rounds"));
  Lifter lifter;
  auto b = lifter.lift_block(img, img.entry_point);
  // readelf -s: func_f at 0x401013
  CHECK(b.addresses_taken_here == std::vector<Addr>{0x401013});
  CHECK(b.start == img.entry_point);
  std::uint64_t covered = 0;
  for (const auto& i : b.instructions) covered += i.length;
  CHECK(covered == b.byte_len);
}

TEST_CASE("width semantics") {
  const std::uint64_t old = 0x1122334455667788;
  CHECK(apply_write(old, 0xaabbccdd, Width::W32) == 0xaabbccdd);
  CHECK(apply_write(old, 0xabcd, Width::W16) == 0x112233445566abcd);
  CHECK(apply_write(old, 0xee, Width::L8) == 0x11223344556677ee);
  CHECK(apply_write(old, 0xee, Width::H8) == 0x112233445566ee88);
  CHECK(apply_write(old, 5, Width::W64) == 5);
  CHECK(apply_read(old, Width::H8) == 0x77);
  CHECK(apply_read(old, Width::W16) == 0x7788);

  // After a constant write at any width, the 64-bit parent agrees with the
  // ISA rule when the old value is known.
  for (auto w : {Width::L8, Width::H8, Width::W16, Width::W32, Width::W64}) {
    SymState s = initial_state(false);
    MicroOp init;
    init.kind = OpKind::WriteRegConst;
    init.dst = {Gpr::Rax, Width::W64};
    init.imm = old;
    apply_op(s, init);
    MicroOp op;
    op.kind = OpKind::WriteRegConst;
    op.dst = {Gpr::Rax, w};
    op.imm = 0x5a;
    apply_op(s, op);
    auto v = read_reg(s, {Gpr::Rax, Width::W64});
    REQUIRE(v.is_const());
    CHECK(*v.values().begin() == apply_write(old, 0x5a, w));
  }
}

TEST_CASE("every written register is modeled") {
  // Random byte strings through the decoder; whatever decodes must not
  // write a register the lifted ops leave untouched.
  std::mt19937_64 rng(20240611);
  auto dec = make_decoder();
  std::size_t decoded = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<std::uint8_t> bytes(15);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    if (i % 2) bytes[0] = static_cast<std::uint8_t>(0x48 | (rng() & 7));  // REX.W forms
    auto insn = dec->decode(bytes, 0x400000);
    if (!insn) continue;
    ++decoded;
    auto ops = lift_instruction(*insn);
    for (Gpr g : insn->gprs_written) {
      bool seen = false;
      for (const auto& op : ops) seen = seen || writes_register(op, g);
      if (!seen) FAIL_CHECK(insn->text << " writes " << gpr_name(g));
    }
  }
  CHECK(decoded > 5000);
}
