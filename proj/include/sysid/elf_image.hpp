#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysid/types.hpp"

namespace sysid {

enum class BinaryKind {
  StaticExec,
  DynamicExec,  // ET_EXEC with a dynamic section (non-PIE, dynamically linked)
  PieExec,
  SharedObject,
};

std::string_view to_string(BinaryKind kind);

struct CodeRange {
  Addr start = 0;
  std::uint64_t size = 0;

  Addr end() const { return start + size; }
  bool contains(Addr a) const { return a >= start && a < end(); }
  bool operator==(const CodeRange&) const = default;
};

struct SymbolDef {
  std::string name;
  Addr address = 0;
  std::uint64_t size = 0;
  bool is_function = false;
  bool is_exported = false;
  // Version tag of a versioned dynamic symbol ("GLIBC_2.2.5"); the name
  // itself is always the flattened base name.
  std::string version;

  bool operator==(const SymbolDef&) const = default;
};

struct Segment {
  Addr vaddr = 0;
  std::uint64_t mem_size = 0;
  std::vector<std::uint8_t> data;  // file-backed prefix; the rest reads as zero
  bool executable = false;
  bool writable = false;

  bool operator==(const Segment&) const = default;
};

/// An ELF64 x86-64 file mapped into its virtual address space. Immutable
/// after load.
struct BinaryImage {
  std::string path;
  BinaryKind kind = BinaryKind::StaticExec;
  Addr entry_point = 0;
  std::vector<CodeRange> code_ranges;  // sorted, non-overlapping
  std::vector<Segment> segments;
  std::vector<SymbolDef> symbols;
  std::vector<std::string> dyn_deps;      // DT_NEEDED in link order
  std::map<std::string, Addr> plt_map;    // import name -> PLT stub
  std::map<std::string, Addr> exported;   // export name -> function address
  std::map<Addr, std::string> got_imports;  // GOT slot -> import name
  std::vector<CodeRange> unwind_ranges;   // FDE pc ranges from .eh_frame
  std::vector<Addr> init_functions;       // DT_INIT, DT_INIT_ARRAY, DT_PREINIT_ARRAY
  std::string soname;
  std::string interpreter;
  std::vector<std::string> runpath;

  bool operator==(const BinaryImage&) const = default;

  bool is_executable() const { return kind != BinaryKind::SharedObject; }
  bool is_dynamic() const { return kind != BinaryKind::StaticExec; }

  /// The code range holding `a`, if any.
  const CodeRange* code_range_of(Addr a) const;
  bool in_code(Addr a) const { return code_range_of(a) != nullptr; }

  /// Bytes from `a` to the end of its code range; empty outside code.
  std::span<const std::uint8_t> code_bytes(Addr a) const;

  /// Reads mapped memory (any segment). Bytes past the file-backed part of a
  /// segment read as zero. Returns nullopt if any byte is unmapped.
  std::optional<std::uint64_t> read_u64(Addr a) const;
  std::optional<std::int32_t> read_i32(Addr a) const;
  bool is_mapped(Addr a) const;

  /// Library name used for dependency resolution: soname, else file name.
  std::string library_name() const;
};

BinaryImage load_binary(const std::filesystem::path& path);
BinaryImage parse_binary(std::span<const std::uint8_t> file, std::string path);

/// Executables: the entry point. Shared objects: every exported function,
/// ascending.
std::vector<Addr> list_entry_points(const BinaryImage& img);

/// 64-bit FNV-1a over the file bytes; stable across runs and platforms.
std::uint64_t content_hash(std::span<const std::uint8_t> bytes);
std::uint64_t file_content_hash(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace sysid
