#include "sysid/registers.hpp"

namespace sysid {
namespace {

constexpr std::array<std::string_view, kGprCount> kNames64 = {
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15"};

constexpr std::array<std::string_view, 8> kLegacy = {"ax", "cx", "dx", "bx",
                                                     "sp", "bp", "si", "di"};

}  // namespace

unsigned width_bits(Width w) {
  switch (w) {
    case Width::L8:
    case Width::H8: return 8;
    case Width::W16: return 16;
    case Width::W32: return 32;
    case Width::W64: return 64;
  }
  return 64;
}

std::optional<Width> width_for_bytes(unsigned bytes) {
  switch (bytes) {
    case 1: return Width::L8;
    case 2: return Width::W16;
    case 4: return Width::W32;
    case 8: return Width::W64;
    default: return std::nullopt;
  }
}

std::string_view gpr_name(Gpr g) { return kNames64[static_cast<std::size_t>(g)]; }

std::optional<Gpr> gpr_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kGprCount; ++i) {
    if (kNames64[i] == name) return static_cast<Gpr>(i);
  }
  return std::nullopt;
}

std::string reg_name(RegRef r) {
  auto idx = static_cast<std::size_t>(r.reg);
  if (idx >= 8) {
    std::string base(kNames64[idx]);
    switch (r.width) {
      case Width::L8:
      case Width::H8: return base + "b";
      case Width::W16: return base + "w";
      case Width::W32: return base + "d";
      case Width::W64: return base;
    }
  }
  std::string legacy(kLegacy[idx]);
  switch (r.width) {
    case Width::L8:
      return idx < 4 ? std::string(1, legacy[0]) + "l" : legacy + "l";
    case Width::H8: return std::string(1, legacy[0]) + "h";
    case Width::W16: return legacy;
    case Width::W32: return "e" + legacy;
    case Width::W64: return "r" + legacy;
  }
  return legacy;
}

std::uint64_t apply_write(std::uint64_t old, std::uint64_t value, Width w) {
  switch (w) {
    case Width::L8: return (old & ~0xffull) | (value & 0xff);
    case Width::H8: return (old & ~0xff00ull) | ((value & 0xff) << 8);
    case Width::W16: return (old & ~0xffffull) | (value & 0xffff);
    case Width::W32: return value & 0xffffffffull;
    case Width::W64: return value;
  }
  return value;
}

std::uint64_t apply_read(std::uint64_t full, Width w) {
  switch (w) {
    case Width::L8: return full & 0xff;
    case Width::H8: return (full >> 8) & 0xff;
    case Width::W16: return full & 0xffff;
    case Width::W32: return full & 0xffffffffull;
    case Width::W64: return full;
  }
  return full;
}

bool is_caller_saved(Gpr g) {
  switch (g) {
    case Gpr::Rax:
    case Gpr::Rcx:
    case Gpr::Rdx:
    case Gpr::Rsi:
    case Gpr::Rdi:
    case Gpr::R8:
    case Gpr::R9:
    case Gpr::R10:
    case Gpr::R11: return true;
    default: return false;
  }
}

}  // namespace sysid
