#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sysid {

/// The 16 general-purpose registers, in hardware encoding order.
enum class Gpr : std::uint8_t {
  Rax, Rcx, Rdx, Rbx, Rsp, Rbp, Rsi, Rdi,
  R8, R9, R10, R11, R12, R13, R14, R15,
};

inline constexpr std::size_t kGprCount = 16;

enum class Width : std::uint8_t { L8, H8, W16, W32, W64 };

struct RegRef {
  Gpr reg = Gpr::Rax;
  Width width = Width::W64;

  bool operator==(const RegRef&) const = default;
  auto operator<=>(const RegRef&) const = default;
};

unsigned width_bits(Width w);
std::optional<Width> width_for_bytes(unsigned bytes);

/// Conventional name of the sub-register ("eax", "r8d", "ah", "rsp").
std::string reg_name(RegRef r);
std::string_view gpr_name(Gpr g);
std::optional<Gpr> gpr_from_name(std::string_view name);

/// The value a write of `value` at width `w` leaves in a 64-bit register
/// previously holding `old`: 32-bit writes zero-extend, 8/16-bit writes
/// preserve the untouched bits.
std::uint64_t apply_write(std::uint64_t old, std::uint64_t value, Width w);

/// The bits visible through a read at width `w`, zero-extended.
std::uint64_t apply_read(std::uint64_t full, Width w);

/// True when a write at this width replaces the whole 64-bit register.
inline bool write_replaces_parent(Width w) { return w == Width::W32 || w == Width::W64; }

/// SysV x86-64 registers a callee may clobber (rax, rcx, rdx, rsi, rdi, r8-r11).
bool is_caller_saved(Gpr g);

/// Integer argument registers in order: rdi, rsi, rdx, rcx, r8, r9.
inline constexpr std::array<Gpr, 6> kArgRegs = {Gpr::Rdi, Gpr::Rsi, Gpr::Rdx,
                                                Gpr::Rcx, Gpr::R8,  Gpr::R9};

}  // namespace sysid
