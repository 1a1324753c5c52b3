#include <capstone/capstone.h>

#include <algorithm>

#include "sysid/decoder.hpp"
#include "sysid/error.hpp"

namespace sysid {
namespace {

struct RegInfo {
  Gpr gpr;
  Width width;
};

std::optional<RegInfo> map_reg(unsigned r) {
  switch (r) {
#define SYSID_REG(q, d, w, l, g) \
  case X86_REG_##q: return RegInfo{Gpr::g, Width::W64}; \
  case X86_REG_##d: return RegInfo{Gpr::g, Width::W32}; \
  case X86_REG_##w: return RegInfo{Gpr::g, Width::W16}; \
  case X86_REG_##l: return RegInfo{Gpr::g, Width::L8};
    SYSID_REG(RAX, EAX, AX, AL, Rax)
    SYSID_REG(RCX, ECX, CX, CL, Rcx)
    SYSID_REG(RDX, EDX, DX, DL, Rdx)
    SYSID_REG(RBX, EBX, BX, BL, Rbx)
    SYSID_REG(RSP, ESP, SP, SPL, Rsp)
    SYSID_REG(RBP, EBP, BP, BPL, Rbp)
    SYSID_REG(RSI, ESI, SI, SIL, Rsi)
    SYSID_REG(RDI, EDI, DI, DIL, Rdi)
    SYSID_REG(R8, R8D, R8W, R8B, R8)
    SYSID_REG(R9, R9D, R9W, R9B, R9)
    SYSID_REG(R10, R10D, R10W, R10B, R10)
    SYSID_REG(R11, R11D, R11W, R11B, R11)
    SYSID_REG(R12, R12D, R12W, R12B, R12)
    SYSID_REG(R13, R13D, R13W, R13B, R13)
    SYSID_REG(R14, R14D, R14W, R14B, R14)
    SYSID_REG(R15, R15D, R15W, R15B, R15)
#undef SYSID_REG
    case X86_REG_AH: return RegInfo{Gpr::Rax, Width::H8};
    case X86_REG_CH: return RegInfo{Gpr::Rcx, Width::H8};
    case X86_REG_DH: return RegInfo{Gpr::Rdx, Width::H8};
    case X86_REG_BH: return RegInfo{Gpr::Rbx, Width::H8};
    default: return std::nullopt;
  }
}

Mnemonic classify(const cs_insn& insn) {
  switch (insn.id) {
    case X86_INS_MOV: return Mnemonic::Mov;
    case X86_INS_MOVABS: return Mnemonic::Movabs;
    case X86_INS_MOVZX: return Mnemonic::Movzx;
    case X86_INS_MOVSX: return Mnemonic::Movsx;
    case X86_INS_MOVSXD: return Mnemonic::Movsxd;
    case X86_INS_LEA: return Mnemonic::Lea;
    case X86_INS_XOR: return Mnemonic::Xor;
    case X86_INS_ADD: return Mnemonic::Add;
    case X86_INS_SUB: return Mnemonic::Sub;
    case X86_INS_AND: return Mnemonic::And;
    case X86_INS_OR: return Mnemonic::Or;
    case X86_INS_INC: return Mnemonic::Inc;
    case X86_INS_DEC: return Mnemonic::Dec;
    case X86_INS_PUSH: return Mnemonic::Push;
    case X86_INS_POP: return Mnemonic::Pop;
    case X86_INS_LEAVE: return Mnemonic::Leave;
    case X86_INS_CALL: return Mnemonic::Call;
    case X86_INS_RET: return Mnemonic::Ret;
    case X86_INS_JMP: return Mnemonic::Jmp;
    case X86_INS_SYSCALL: return Mnemonic::Syscall;
    case X86_INS_SYSENTER: return Mnemonic::Sysenter;
    case X86_INS_INT: return Mnemonic::Int;
    case X86_INS_ENDBR64: return Mnemonic::Endbr64;
    case X86_INS_NOP: return Mnemonic::Nop;
    case X86_INS_HLT: return Mnemonic::Hlt;
    case X86_INS_UD2: return Mnemonic::Ud2;
    default: break;
  }
  const cs_detail* d = insn.detail;
  for (std::uint8_t i = 0; i < d->groups_count; ++i) {
    // Conditional jumps, loop and jrcxz all land here.
    if (d->groups[i] == X86_GRP_JUMP) return Mnemonic::Jcc;
  }
  return Mnemonic::Other;
}

class CapstoneDecoder final : public Decoder {
 public:
  CapstoneDecoder() {
    if (cs_open(CS_ARCH_X86, CS_MODE_64, &handle_) != CS_ERR_OK) {
      throw Error(ErrorCode::DecodeFailure, "cannot initialize the disassembler");
    }
    cs_option(handle_, CS_OPT_DETAIL, CS_OPT_ON);
    insn_ = cs_malloc(handle_);
  }

  ~CapstoneDecoder() override {
    cs_free(insn_, 1);
    cs_close(&handle_);
  }

  CapstoneDecoder(const CapstoneDecoder&) = delete;
  CapstoneDecoder& operator=(const CapstoneDecoder&) = delete;

  std::optional<Instruction> decode(std::span<const std::uint8_t> bytes, Addr address) override {
    const std::uint8_t* code = bytes.data();
    std::size_t size = bytes.size();
    std::uint64_t pc = address;
    if (size == 0 || !cs_disasm_iter(handle_, &code, &size, &pc, insn_)) return std::nullopt;

    Instruction out;
    out.address = address;
    out.length = static_cast<std::uint8_t>(insn_->size);
    out.mnemonic = classify(*insn_);
    out.text = insn_->mnemonic;
    if (insn_->op_str[0]) {
      out.text += ' ';
      out.text += insn_->op_str;
    }

    const cs_x86& x = insn_->detail->x86;
    for (std::uint8_t i = 0; i < x.op_count; ++i) {
      const cs_x86_op& op = x.operands[i];
      Operand o;
      o.size = op.size;
      o.read = (op.access & CS_AC_READ) != 0;
      o.written = (op.access & CS_AC_WRITE) != 0;
      switch (op.type) {
        case X86_OP_REG:
          if (auto r = map_reg(op.reg)) {
            o.kind = Operand::Kind::Reg;
            o.reg = {r->gpr, r->width};
          }
          break;
        case X86_OP_IMM:
          o.kind = Operand::Kind::Imm;
          o.imm = op.imm;
          break;
        case X86_OP_MEM: {
          o.kind = Operand::Kind::Mem;
          MemOperand& m = o.mem;
          m.disp = op.mem.disp;
          m.scale = static_cast<unsigned>(op.mem.scale);
          m.segment_override = op.mem.segment == X86_REG_FS || op.mem.segment == X86_REG_GS;
          bool base_ok = true;
          if (op.mem.base == X86_REG_RIP) {
            m.rip_relative = true;
            m.absolute = out.next() + static_cast<std::uint64_t>(m.disp);
          } else if (op.mem.base != X86_REG_INVALID) {
            auto r = map_reg(op.mem.base);
            if (r && r->width == Width::W64) m.base = r->gpr; else base_ok = false;
          }
          if (op.mem.index != X86_REG_INVALID) {
            auto r = map_reg(op.mem.index);
            if (r && r->width == Width::W64) m.index = r->gpr; else base_ok = false;
          }
          if (!base_ok) {
            // 32-bit address-size forms: keep as an untracked memory access.
            o.kind = Operand::Kind::Other;
          } else if (!m.base && !m.index && !m.rip_relative) {
            m.absolute = static_cast<std::uint64_t>(m.disp);
          }
          if (o.written) out.writes_memory = true;
          break;
        }
        default:
          break;
      }
      out.operands.push_back(o);
    }

    cs_regs read{}, write{};
    std::uint8_t nread = 0, nwrite = 0;
    if (cs_regs_access(handle_, insn_, read, &nread, write, &nwrite) == CS_ERR_OK) {
      for (std::uint8_t i = 0; i < nwrite; ++i) {
        if (auto r = map_reg(write[i])) out.gprs_written.push_back(r->gpr);
      }
    }
    // Implicit stack traffic is not always reported as a memory operand.
    if (out.mnemonic == Mnemonic::Push || out.mnemonic == Mnemonic::Call) out.writes_memory = true;
    std::sort(out.gprs_written.begin(), out.gprs_written.end());
    out.gprs_written.erase(std::unique(out.gprs_written.begin(), out.gprs_written.end()),
                           out.gprs_written.end());
    return out;
  }

 private:
  csh handle_ = 0;
  cs_insn* insn_ = nullptr;
};

}  // namespace

std::unique_ptr<Decoder> make_decoder() { return std::make_unique<CapstoneDecoder>(); }

}  // namespace sysid
