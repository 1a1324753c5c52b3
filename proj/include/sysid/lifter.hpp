#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sysid/decoder.hpp"
#include "sysid/elf_image.hpp"
#include "sysid/registers.hpp"

namespace sysid {

enum class OpKind : std::uint8_t {
  WriteRegConst,         // dst <- imm
  CopyRegReg,            // dst <- extend(src)
  LoadEffectiveAddress,  // dst <- imm (absolute) or address of a stack slot
  StoreStack,            // [slot] <- src | imm | unknown
  LoadStack,             // dst <- [slot]
  StoreUnknown,          // write through an untracked address
  LoadUnknown,           // dst <- untracked memory
  ArithImm,              // dst <- dst (op) imm
  HavocReg,              // dst <- anything
  Push,                  // rsp -= 8; [rsp] <- src | imm | unknown
  Pop,                   // dst <- [rsp]; rsp += 8
  CallDirect,
  CallIndirect,
  Return,
  JumpDirect,
  JumpIndirect,
  Branch,
  Syscall,
  Nop,
};

std::string_view to_string(OpKind k);

enum class ArithKind : std::uint8_t { Add, Sub, And, Or, Xor };

enum class StackBase : std::uint8_t { Rsp, Rbp };

/// A stack slot addressed relative to rsp or rbp at the time of the access.
struct StackRef {
  StackBase base = StackBase::Rsp;
  std::int64_t disp = 0;

  bool operator==(const StackRef&) const = default;
};

enum class ValueSource : std::uint8_t { Reg, Imm, Unknown };

enum class Extend : std::uint8_t { Zero, Sign };

struct MicroOp {
  OpKind kind = OpKind::Nop;
  Addr insn = 0;            // address of the originating instruction
  RegRef dst;
  RegRef src;
  std::uint64_t imm = 0;
  StackRef slot;            // StoreStack, LoadStack, stack-form LEA
  bool stack_address = false;  // LEA: dst receives the address of `slot`
  unsigned size = 8;        // bytes moved by memory ops / source width of extends
  Extend extend = Extend::Zero;
  ArithKind arith = ArithKind::Add;
  ValueSource source = ValueSource::Unknown;  // StoreStack, Push
  std::optional<Addr> target;      // direct calls, jumps, branches
  std::optional<Addr> mem_target;  // indirect via a fixed memory cell (GOT slot, table base)

  bool operator==(const MicroOp&) const = default;
};

std::string describe(const MicroOp& op);

enum class Terminator : std::uint8_t {
  Fallthrough,
  JumpDirect,
  JumpIndirect,
  Branch,
  CallDirect,
  CallIndirect,
  Return,
  SyscallContinuing,
  Halt,  // hlt / ud2: execution cannot continue
};

std::string_view to_string(Terminator t);

struct LiftedBlock {
  Addr start = 0;
  std::uint64_t byte_len = 0;
  std::vector<MicroOp> ops;
  Terminator terminator = Terminator::Fallthrough;
  std::vector<Addr> addresses_taken_here;
  std::vector<Instruction> instructions;
  std::vector<Addr> legacy_syscalls;  // sysenter / int 0x80: reported, not analyzed
  // Stand-in for code that failed to decode: unknown effects, no successors.
  bool unknown_effects = false;

  Addr end() const { return start + byte_len; }
  bool contains(Addr a) const { return a >= start && a < end(); }
  /// Address of every Syscall op, ascending.
  std::vector<Addr> syscall_sites() const;
  /// Target of a direct call/jump/branch terminator.
  std::optional<Addr> direct_target() const;
  bool is_call() const {
    return terminator == Terminator::CallDirect || terminator == Terminator::CallIndirect;
  }
  bool has_fallthrough() const;
};

/// Lifts one decoded instruction. Instructions outside the modeled subset
/// become HavocReg on every written register plus untracked stores.
std::vector<MicroOp> lift_instruction(const Instruction& insn);

/// Code addresses an instruction materializes: rip-relative or absolute lea
/// operands, and absolute immediates, that land in a code range.
std::vector<Addr> addresses_taken_by(const Instruction& insn, const BinaryImage& img);

class Lifter {
 public:
  Lifter();
  explicit Lifter(std::unique_ptr<Decoder> decoder);

  /// Decodes from `start` until a control-flow terminator, hlt/ud2, or the
  /// next instruction address is in `leaders`. Throws DecodeFailure.
  LiftedBlock lift_block(const BinaryImage& img, Addr start,
                         const std::set<Addr>* leaders = nullptr);

  std::optional<Instruction> decode_at(const BinaryImage& img, Addr a);

 private:
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace sysid
