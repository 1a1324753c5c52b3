#include "sysid/lifter.hpp"

#include <sstream>

#include "sysid/error.hpp"

namespace sysid {
namespace {

using Kind = Operand::Kind;

std::optional<StackRef> stack_ref(const Operand& o) {
  if (o.kind != Kind::Mem) return std::nullopt;
  const MemOperand& m = o.mem;
  if (m.segment_override || m.index || !m.base) return std::nullopt;
  if (*m.base == Gpr::Rsp) return StackRef{StackBase::Rsp, m.disp};
  if (*m.base == Gpr::Rbp) return StackRef{StackBase::Rbp, m.disp};
  return std::nullopt;
}

std::optional<Addr> fixed_address(const Operand& o) {
  if (o.kind != Kind::Mem || o.mem.segment_override) return std::nullopt;
  return o.mem.absolute;
}

class Emitter {
 public:
  explicit Emitter(const Instruction& in) : in_(in) {}

  MicroOp& emit(OpKind k) {
    ops_.emplace_back();
    ops_.back().kind = k;
    ops_.back().insn = in_.address;
    return ops_.back();
  }

  void havoc_reg(Gpr g) { emit(OpKind::HavocReg).dst = {g, Width::W64}; }

  // Sound fallback: every written register is havocked and every memory
  // write goes to an unknown location (or an unknown value in a stack slot).
  void havoc_all() {
    for (Gpr g : in_.gprs_written) havoc_reg(g);
    for (const auto& o : in_.operands) {
      if (!o.written || o.kind == Kind::Reg || o.kind == Kind::Imm) continue;
      if (auto slot = stack_ref(o)) {
        auto& st = emit(OpKind::StoreStack);
        st.slot = *slot;
        st.size = o.size ? o.size : 8;
        st.source = ValueSource::Unknown;
      } else {
        emit(OpKind::StoreUnknown).size = o.size;
      }
    }
    if (ops_.empty()) emit(OpKind::Nop);
  }

  void load(const RegRef& dst, const Operand& src, Extend ext) {
    if (auto slot = stack_ref(src)) {
      auto& op = emit(OpKind::LoadStack);
      op.dst = dst;
      op.slot = *slot;
      op.size = src.size;
      op.extend = ext;
    } else {
      emit(OpKind::LoadUnknown).dst = dst;
    }
  }

  void store(const Operand& dst, const Operand& src) {
    auto slot = stack_ref(dst);
    if (!slot) {
      emit(OpKind::StoreUnknown).size = dst.size;
      return;
    }
    auto& op = emit(OpKind::StoreStack);
    op.slot = *slot;
    op.size = dst.size;
    if (src.kind == Kind::Reg) {
      op.source = ValueSource::Reg;
      op.src = src.reg;
    } else if (src.kind == Kind::Imm) {
      op.source = ValueSource::Imm;
      op.imm = static_cast<std::uint64_t>(src.imm);
    }
  }

  std::vector<MicroOp> take() { return std::move(ops_); }

 private:
  const Instruction& in_;
  std::vector<MicroOp> ops_;
};

bool all_modeled(const Instruction& in) {
  for (const auto& o : in.operands) {
    if (o.kind == Kind::Other) return false;
  }
  return true;
}

void lift_mov(const Instruction& in, Emitter& e) {
  const auto& dst = in.operands[0];
  const auto& src = in.operands[1];
  if (dst.kind == Kind::Reg) {
    switch (src.kind) {
      case Kind::Imm: {
        auto& op = e.emit(OpKind::WriteRegConst);
        op.dst = dst.reg;
        op.imm = static_cast<std::uint64_t>(src.imm);
        return;
      }
      case Kind::Reg: {
        auto& op = e.emit(OpKind::CopyRegReg);
        op.dst = dst.reg;
        op.src = src.reg;
        op.size = src.size;
        return;
      }
      case Kind::Mem: e.load(dst.reg, src, Extend::Zero); return;
      default: break;
    }
  } else if (dst.kind == Kind::Mem) {
    e.store(dst, src);
    return;
  }
  e.havoc_all();
}

void lift_extend(const Instruction& in, Emitter& e, Extend ext) {
  const auto& dst = in.operands[0];
  const auto& src = in.operands[1];
  if (dst.kind != Kind::Reg) return e.havoc_all();
  if (src.kind == Kind::Reg) {
    auto& op = e.emit(OpKind::CopyRegReg);
    op.dst = dst.reg;
    op.src = src.reg;
    op.size = src.size;
    op.extend = ext;
  } else if (src.kind == Kind::Mem) {
    e.load(dst.reg, src, ext);
  } else {
    e.havoc_all();
  }
}

void lift_lea(const Instruction& in, Emitter& e) {
  const auto& dst = in.operands[0];
  const auto& src = in.operands[1];
  if (dst.kind != Kind::Reg || src.kind != Kind::Mem) return e.havoc_all();
  if (auto abs = fixed_address(src)) {
    auto& op = e.emit(OpKind::LoadEffectiveAddress);
    op.dst = dst.reg;
    op.imm = *abs;
    return;
  }
  if (auto slot = stack_ref(src); slot && dst.reg.width == Width::W64) {
    auto& op = e.emit(OpKind::LoadEffectiveAddress);
    op.dst = dst.reg;
    op.slot = *slot;
    op.stack_address = true;
    return;
  }
  e.havoc_reg(dst.reg.reg);
}

void lift_arith(const Instruction& in, Emitter& e, ArithKind kind) {
  const auto& dst = in.operands[0];
  const auto& src = in.operands[1];
  if (kind == ArithKind::Xor && dst.kind == Kind::Reg && src.kind == Kind::Reg &&
      dst.reg == src.reg) {
    auto& op = e.emit(OpKind::WriteRegConst);
    op.dst = dst.reg;
    op.imm = 0;
    return;
  }
  if (dst.kind == Kind::Reg && src.kind == Kind::Imm) {
    auto& op = e.emit(OpKind::ArithImm);
    op.dst = dst.reg;
    op.arith = kind;
    op.imm = static_cast<std::uint64_t>(src.imm);
    return;
  }
  e.havoc_all();
}

}  // namespace

std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::WriteRegConst: return "WriteRegConst";
    case OpKind::CopyRegReg: return "CopyRegReg";
    case OpKind::LoadEffectiveAddress: return "LoadEffectiveAddress";
    case OpKind::StoreStack: return "StoreStack";
    case OpKind::LoadStack: return "LoadStack";
    case OpKind::StoreUnknown: return "StoreUnknown";
    case OpKind::LoadUnknown: return "LoadUnknown";
    case OpKind::ArithImm: return "ArithImm";
    case OpKind::HavocReg: return "HavocReg";
    case OpKind::Push: return "Push";
    case OpKind::Pop: return "Pop";
    case OpKind::CallDirect: return "CallDirect";
    case OpKind::CallIndirect: return "CallIndirect";
    case OpKind::Return: return "Return";
    case OpKind::JumpDirect: return "JumpDirect";
    case OpKind::JumpIndirect: return "JumpIndirect";
    case OpKind::Branch: return "Branch";
    case OpKind::Syscall: return "Syscall";
    case OpKind::Nop: return "Nop";
  }
  return "?";
}

std::string_view to_string(Terminator t) {
  switch (t) {
    case Terminator::Fallthrough: return "fallthrough";
    case Terminator::JumpDirect: return "jump";
    case Terminator::JumpIndirect: return "jump-indirect";
    case Terminator::Branch: return "branch";
    case Terminator::CallDirect: return "call";
    case Terminator::CallIndirect: return "call-indirect";
    case Terminator::Return: return "return";
    case Terminator::SyscallContinuing: return "syscall-continuing";
    case Terminator::Halt: return "halt";
  }
  return "?";
}

std::string describe(const MicroOp& op) {
  std::ostringstream out;
  out << to_string(op.kind);
  auto slot = [&] {
    out << (op.slot.base == StackBase::Rsp ? "rsp" : "rbp") << (op.slot.disp < 0 ? "" : "+")
        << op.slot.disp;
  };
  switch (op.kind) {
    case OpKind::WriteRegConst:
      out << '(' << reg_name(op.dst) << ", " << op.imm << ')';
      break;
    case OpKind::CopyRegReg:
      out << '(' << reg_name(op.dst) << ", " << reg_name(op.src) << ')';
      break;
    case OpKind::LoadEffectiveAddress:
      out << '(' << reg_name(op.dst) << ", ";
      if (op.stack_address) slot(); else out << hex(op.imm);
      out << ')';
      break;
    case OpKind::StoreStack:
    case OpKind::Push:
      out << '(';
      if (op.kind == OpKind::StoreStack) { slot(); out << ", "; }
      if (op.source == ValueSource::Reg) out << reg_name(op.src);
      else if (op.source == ValueSource::Imm) out << op.imm;
      else out << '?';
      out << ')';
      break;
    case OpKind::LoadStack:
      out << '(' << reg_name(op.dst) << ", ";
      slot();
      out << ')';
      break;
    case OpKind::ArithImm:
      out << '(' << reg_name(op.dst) << ", " << static_cast<int>(op.arith) << ", "
          << static_cast<std::int64_t>(op.imm) << ')';
      break;
    case OpKind::HavocReg:
    case OpKind::LoadUnknown:
    case OpKind::Pop:
      out << '(' << reg_name(op.dst) << ')';
      break;
    case OpKind::CallDirect:
    case OpKind::JumpDirect:
    case OpKind::Branch:
      if (op.target) out << '(' << hex(*op.target) << ')';
      break;
    default:
      break;
  }
  return out.str();
}

std::vector<MicroOp> lift_instruction(const Instruction& in) {
  Emitter e(in);
  const auto& o = in.operands;
  if (!all_modeled(in)) {
    e.havoc_all();
    return e.take();
  }
  switch (in.mnemonic) {
    case Mnemonic::Mov:
    case Mnemonic::Movabs:
      if (o.size() == 2) lift_mov(in, e); else e.havoc_all();
      break;
    case Mnemonic::Movzx:
    case Mnemonic::Movsx:
    case Mnemonic::Movsxd:
      if (o.size() == 2) {
        lift_extend(in, e, in.mnemonic == Mnemonic::Movzx ? Extend::Zero : Extend::Sign);
      } else {
        e.havoc_all();
      }
      break;
    case Mnemonic::Lea:
      if (o.size() == 2) lift_lea(in, e); else e.havoc_all();
      break;
    case Mnemonic::Xor:
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::And:
    case Mnemonic::Or: {
      if (o.size() != 2) { e.havoc_all(); break; }
      ArithKind k = in.mnemonic == Mnemonic::Xor   ? ArithKind::Xor
                    : in.mnemonic == Mnemonic::Add ? ArithKind::Add
                    : in.mnemonic == Mnemonic::Sub ? ArithKind::Sub
                    : in.mnemonic == Mnemonic::And ? ArithKind::And
                                                   : ArithKind::Or;
      lift_arith(in, e, k);
      break;
    }
    case Mnemonic::Inc:
    case Mnemonic::Dec:
      if (o.size() == 1 && o[0].kind == Kind::Reg) {
        auto& op = e.emit(OpKind::ArithImm);
        op.dst = o[0].reg;
        op.arith = in.mnemonic == Mnemonic::Inc ? ArithKind::Add : ArithKind::Sub;
        op.imm = 1;
      } else {
        e.havoc_all();
      }
      break;
    case Mnemonic::Push: {
      if (o.size() != 1 || (o[0].kind == Kind::Reg && o[0].reg.width != Width::W64) ||
          o[0].size == 2) {
        e.havoc_all();
        break;
      }
      auto& op = e.emit(OpKind::Push);
      op.size = 8;
      if (o[0].kind == Kind::Reg) {
        op.source = ValueSource::Reg;
        op.src = o[0].reg;
      } else if (o[0].kind == Kind::Imm) {
        op.source = ValueSource::Imm;
        op.imm = static_cast<std::uint64_t>(o[0].imm);
      }
      break;
    }
    case Mnemonic::Pop:
      if (o.size() == 1 && o[0].kind == Kind::Reg && o[0].reg.width == Width::W64) {
        e.emit(OpKind::Pop).dst = o[0].reg;
      } else {
        e.havoc_all();
      }
      break;
    case Mnemonic::Leave: {
      auto& copy = e.emit(OpKind::CopyRegReg);
      copy.dst = {Gpr::Rsp, Width::W64};
      copy.src = {Gpr::Rbp, Width::W64};
      e.emit(OpKind::Pop).dst = {Gpr::Rbp, Width::W64};
      break;
    }
    case Mnemonic::Call:
      if (!o.empty() && o[0].kind == Kind::Imm) {
        e.emit(OpKind::CallDirect).target = static_cast<Addr>(o[0].imm);
      } else {
        e.emit(OpKind::CallIndirect).mem_target = o.empty() ? std::nullopt : fixed_address(o[0]);
      }
      break;
    case Mnemonic::Ret:
      e.emit(OpKind::Return);
      break;
    case Mnemonic::Jmp:
      if (!o.empty() && o[0].kind == Kind::Imm) {
        e.emit(OpKind::JumpDirect).target = static_cast<Addr>(o[0].imm);
      } else {
        e.emit(OpKind::JumpIndirect).mem_target = o.empty() ? std::nullopt : fixed_address(o[0]);
      }
      break;
    case Mnemonic::Jcc:
      // loop/loopcc decrement rcx before branching.
      for (Gpr g : in.gprs_written) e.havoc_reg(g);
      if (!o.empty() && o[0].kind == Kind::Imm) {
        e.emit(OpKind::Branch).target = static_cast<Addr>(o[0].imm);
      } else {
        e.emit(OpKind::JumpIndirect);
      }
      break;
    case Mnemonic::Syscall:
      e.emit(OpKind::Syscall);
      break;
    case Mnemonic::Sysenter:
    case Mnemonic::Int:
    case Mnemonic::Endbr64:
    case Mnemonic::Nop:
    case Mnemonic::Hlt:
    case Mnemonic::Ud2:
      e.emit(OpKind::Nop);
      break;
    case Mnemonic::Other:
      e.havoc_all();
      break;
  }
  return e.take();
}

std::vector<Addr> addresses_taken_by(const Instruction& in, const BinaryImage& img) {
  std::vector<Addr> out;
  if (in.mnemonic == Mnemonic::Lea && in.operands.size() == 2) {
    if (auto a = fixed_address(in.operands[1]); a && img.in_code(*a)) out.push_back(*a);
  }
  // Non-PIC code materializes function addresses as absolute immediates.
  if (in.mnemonic == Mnemonic::Mov || in.mnemonic == Mnemonic::Movabs ||
      in.mnemonic == Mnemonic::Push) {
    for (const auto& o : in.operands) {
      if (o.kind != Kind::Imm || o.imm <= 0) continue;
      auto a = static_cast<Addr>(o.imm);
      if (img.in_code(a)) out.push_back(a);
    }
  }
  return out;
}

std::vector<Addr> LiftedBlock::syscall_sites() const {
  std::vector<Addr> out;
  for (const auto& op : ops) {
    if (op.kind == OpKind::Syscall) out.push_back(op.insn);
  }
  return out;
}

std::optional<Addr> LiftedBlock::direct_target() const {
  if (ops.empty()) return std::nullopt;
  return ops.back().target;
}

bool LiftedBlock::has_fallthrough() const {
  switch (terminator) {
    case Terminator::Fallthrough:
    case Terminator::SyscallContinuing:
    case Terminator::Branch:
    case Terminator::CallDirect:
    case Terminator::CallIndirect:
      return true;
    default:
      return false;
  }
}

Lifter::Lifter() : decoder_(make_decoder()) {}

Lifter::Lifter(std::unique_ptr<Decoder> decoder) : decoder_(std::move(decoder)) {}

std::optional<Instruction> Lifter::decode_at(const BinaryImage& img, Addr a) {
  auto bytes = img.code_bytes(a);
  if (bytes.empty()) return std::nullopt;
  return decoder_->decode(bytes, a);
}

LiftedBlock Lifter::lift_block(const BinaryImage& img, Addr start, const std::set<Addr>* leaders) {
  if (!img.in_code(start)) {
    throw Error(ErrorCode::DecodeFailure, "block start " + hex(start) + " is outside code");
  }
  LiftedBlock block;
  block.start = start;
  Addr pc = start;
  for (;;) {
    auto insn = decode_at(img, pc);
    if (!insn) throw Error(ErrorCode::DecodeFailure, "undecodable instruction at " + hex(pc));
    auto ops = lift_instruction(*insn);
    block.ops.insert(block.ops.end(), ops.begin(), ops.end());
    for (Addr a : addresses_taken_by(*insn, img)) block.addresses_taken_here.push_back(a);
    if (insn->mnemonic == Mnemonic::Sysenter ||
        (insn->mnemonic == Mnemonic::Int && !insn->operands.empty() &&
         insn->operands[0].kind == Operand::Kind::Imm && insn->operands[0].imm == 0x80)) {
      block.legacy_syscalls.push_back(pc);
    }
    Mnemonic m = insn->mnemonic;
    pc = insn->next();
    block.instructions.push_back(std::move(*insn));

    bool done = true;
    switch (block.ops.back().kind) {
      case OpKind::CallDirect: block.terminator = Terminator::CallDirect; break;
      case OpKind::CallIndirect: block.terminator = Terminator::CallIndirect; break;
      case OpKind::Return: block.terminator = Terminator::Return; break;
      case OpKind::JumpDirect: block.terminator = Terminator::JumpDirect; break;
      case OpKind::JumpIndirect: block.terminator = Terminator::JumpIndirect; break;
      case OpKind::Branch: block.terminator = Terminator::Branch; break;
      default: done = false; break;
    }
    if (!done && (m == Mnemonic::Hlt || m == Mnemonic::Ud2)) {
      block.terminator = Terminator::Halt;
      done = true;
    }
    if (!done && ((leaders && leaders->count(pc)) || !img.in_code(pc))) {
      block.terminator = block.ops.back().kind == OpKind::Syscall ? Terminator::SyscallContinuing
                                                                  : Terminator::Fallthrough;
      done = true;
    }
    if (done) break;
  }
  block.byte_len = pc - start;
  return block;
}

}  // namespace sysid
