#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysid/registers.hpp"
#include "sysid/types.hpp"

namespace sysid {

/// Instruction classes the lifter distinguishes. Everything else is Other.
enum class Mnemonic : std::uint8_t {
  Mov, Movabs, Movzx, Movsx, Movsxd, Lea, Xor, Add, Sub, And, Or, Inc, Dec,
  Push, Pop, Leave, Call, Ret, Jmp, Jcc, Syscall, Sysenter, Int, Endbr64, Nop,
  Hlt, Ud2, Other,
};

struct MemOperand {
  std::optional<Gpr> base;
  std::optional<Gpr> index;
  unsigned scale = 1;
  std::int64_t disp = 0;
  bool rip_relative = false;
  bool segment_override = false;  // fs/gs based: never a plain address
  // Resolved address for rip-relative or absolute (no base/index) forms.
  std::optional<Addr> absolute;
};

struct Operand {
  enum class Kind : std::uint8_t { Reg, Imm, Mem, Other };
  Kind kind = Kind::Other;
  RegRef reg;            // Kind::Reg
  std::int64_t imm = 0;  // Kind::Imm
  MemOperand mem;        // Kind::Mem
  unsigned size = 0;     // bytes
  bool read = false;
  bool written = false;
};

/// A decoded machine instruction in decoder-neutral form. Operands follow
/// Intel order: destination first.
struct Instruction {
  Addr address = 0;
  std::uint8_t length = 0;
  Mnemonic mnemonic = Mnemonic::Other;
  std::vector<Operand> operands;
  std::vector<Gpr> gprs_written;  // 64-bit parents, explicit and implicit
  bool writes_memory = false;
  std::string text;

  Addr next() const { return address + length; }
};

/// The narrow boundary to the third-party disassembler.
class Decoder {
 public:
  virtual ~Decoder() = default;
  /// Decodes one instruction at the start of `bytes`; nullopt if invalid.
  virtual std::optional<Instruction> decode(std::span<const std::uint8_t> bytes, Addr address) = 0;
};

/// Capstone-backed decoder. Each instance owns its own engine handle, so one
/// instance must not be used from two threads at once.
std::unique_ptr<Decoder> make_decoder();

}  // namespace sysid
