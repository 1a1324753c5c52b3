#include "sysid/elf_image.hpp"

#include <elf.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "sysid/error.hpp"

namespace sysid {
namespace {

using Bytes = std::span<const std::uint8_t>;

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedHeaders, what);
}

template <class T>
T read_at(Bytes file, std::uint64_t off, const char* what) {
  if (off > file.size() || file.size() - off < sizeof(T)) {
    malformed(std::string("truncated ") + what);
  }
  T out;
  std::memcpy(&out, file.data() + off, sizeof(T));
  return out;
}

std::string c_string(Bytes table, std::uint64_t off) {
  if (off >= table.size()) return {};
  auto begin = table.begin() + static_cast<std::ptrdiff_t>(off);
  auto end = std::find(begin, table.end(), std::uint8_t{0});
  return std::string(begin, end);
}

struct SectionInfo {
  std::string name;
  Elf64_Shdr hdr;
};

// Everything discovered while parsing; folded into BinaryImage at the end.
class ElfParser {
 public:
  ElfParser(Bytes file, std::string path) : file_(file) { img_.path = std::move(path); }

  BinaryImage run() {
    read_header();
    read_program_headers();
    read_sections();
    read_dynamic();
    read_symbols();
    read_relocations();
    scan_plt();
    read_unwind();
    read_init_functions();
    compute_code_ranges();
    classify();
    return std::move(img_);
  }

 private:
  void read_header() {
    if (file_.size() < 4 || std::memcmp(file_.data(), ELFMAG, SELFMAG) != 0) {
      throw Error(ErrorCode::NotElf, img_.path + ": not an ELF file");
    }
    if (file_.size() < EI_NIDENT) malformed("ELF identification");
    if (file_[EI_CLASS] != ELFCLASS64) {
      throw Error(ErrorCode::UnsupportedClass, img_.path + ": only ELF64 is supported");
    }
    if (file_[EI_DATA] != ELFDATA2LSB) {
      throw Error(ErrorCode::UnsupportedClass, img_.path + ": only little-endian ELF is supported");
    }
    ehdr_ = read_at<Elf64_Ehdr>(file_, 0, "ELF header");
    if (ehdr_.e_machine != EM_X86_64) {
      throw Error(ErrorCode::UnsupportedMachine, img_.path + ": not an x86-64 binary");
    }
    if (ehdr_.e_type != ET_EXEC && ehdr_.e_type != ET_DYN) {
      malformed("unsupported ELF type " + std::to_string(ehdr_.e_type));
    }
    if (ehdr_.e_phnum > 0 && ehdr_.e_phentsize != sizeof(Elf64_Phdr)) {
      malformed("program header entry size");
    }
    img_.entry_point = ehdr_.e_entry;
  }

  void read_program_headers() {
    for (unsigned i = 0; i < ehdr_.e_phnum; ++i) {
      auto ph = read_at<Elf64_Phdr>(file_, ehdr_.e_phoff + std::uint64_t{i} * sizeof(Elf64_Phdr),
                                    "program header");
      switch (ph.p_type) {
        case PT_LOAD: {
          if (ph.p_filesz > ph.p_memsz) malformed("segment file size exceeds memory size");
          if (ph.p_offset > file_.size() || file_.size() - ph.p_offset < ph.p_filesz) {
            malformed("segment extends past end of file");
          }
          Segment seg;
          seg.vaddr = ph.p_vaddr;
          seg.mem_size = ph.p_memsz;
          seg.executable = (ph.p_flags & PF_X) != 0;
          seg.writable = (ph.p_flags & PF_W) != 0;
          auto from = file_.begin() + static_cast<std::ptrdiff_t>(ph.p_offset);
          seg.data.assign(from, from + static_cast<std::ptrdiff_t>(ph.p_filesz));
          img_.segments.push_back(std::move(seg));
          break;
        }
        case PT_DYNAMIC:
          dynamic_ = ph;
          has_dynamic_ = true;
          break;
        case PT_INTERP: {
          if (ph.p_offset > file_.size() || file_.size() - ph.p_offset < ph.p_filesz) {
            malformed("interpreter path");
          }
          img_.interpreter = c_string(file_.subspan(ph.p_offset, ph.p_filesz), 0);
          break;
        }
        case PT_GNU_EH_FRAME:
          eh_frame_hdr_ = ph;
          has_eh_frame_hdr_ = true;
          break;
        default:
          break;
      }
    }
    std::sort(img_.segments.begin(), img_.segments.end(),
              [](const Segment& a, const Segment& b) { return a.vaddr < b.vaddr; });
  }

  void read_sections() {
    if (ehdr_.e_shnum == 0 || ehdr_.e_shoff == 0) return;
    if (ehdr_.e_shentsize != sizeof(Elf64_Shdr)) malformed("section header entry size");
    std::vector<Elf64_Shdr> raw;
    for (unsigned i = 0; i < ehdr_.e_shnum; ++i) {
      raw.push_back(read_at<Elf64_Shdr>(
          file_, ehdr_.e_shoff + std::uint64_t{i} * sizeof(Elf64_Shdr), "section header"));
    }
    Bytes names;
    if (ehdr_.e_shstrndx < raw.size()) names = section_bytes(raw[ehdr_.e_shstrndx]);
    for (const auto& sh : raw) sections_.push_back({c_string(names, sh.sh_name), sh});
  }

  Bytes section_bytes(const Elf64_Shdr& sh) const {
    if (sh.sh_type == SHT_NOBITS) return {};
    if (sh.sh_offset > file_.size() || file_.size() - sh.sh_offset < sh.sh_size) {
      malformed("section extends past end of file");
    }
    return file_.subspan(sh.sh_offset, sh.sh_size);
  }

  const SectionInfo* section(std::string_view name) const {
    for (const auto& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  // File bytes backing the virtual range [addr, addr + size).
  Bytes mapped(Addr addr, std::uint64_t size) const {
    for (const auto& seg : img_.segments) {
      if (addr >= seg.vaddr && addr - seg.vaddr <= seg.data.size() &&
          seg.data.size() - (addr - seg.vaddr) >= size) {
        return Bytes(seg.data).subspan(addr - seg.vaddr, size);
      }
    }
    malformed("dynamic table points outside file-backed memory at " + hex(addr));
  }

  void read_dynamic() {
    if (!has_dynamic_) return;
    if (dynamic_.p_offset > file_.size() || file_.size() - dynamic_.p_offset < dynamic_.p_filesz) {
      malformed("dynamic section");
    }
    std::vector<std::uint64_t> needed_offsets;
    std::uint64_t soname_off = 0, runpath_off = 0;
    bool has_soname = false, has_runpath = false;
    for (std::uint64_t off = 0; off + sizeof(Elf64_Dyn) <= dynamic_.p_filesz; off += sizeof(Elf64_Dyn)) {
      auto d = read_at<Elf64_Dyn>(file_, dynamic_.p_offset + off, "dynamic entry");
      if (d.d_tag == DT_NULL) break;
      auto v = d.d_un.d_val;
      switch (d.d_tag) {
        case DT_NEEDED: needed_offsets.push_back(v); break;
        case DT_SONAME: soname_off = v; has_soname = true; break;
        case DT_RUNPATH:
        case DT_RPATH:
          // DT_RUNPATH takes precedence over DT_RPATH when both exist.
          if (!has_runpath || d.d_tag == DT_RUNPATH) { runpath_off = v; has_runpath = true; }
          break;
        default: dyn_[d.d_tag] = v; break;
      }
    }
    if (dyn_.count(DT_STRTAB) && dyn_.count(DT_STRSZ)) {
      dynstr_ = mapped(dyn_[DT_STRTAB], dyn_[DT_STRSZ]);
    }
    for (auto off : needed_offsets) img_.dyn_deps.push_back(c_string(dynstr_, off));
    if (has_soname) img_.soname = c_string(dynstr_, soname_off);
    if (has_runpath) {
      std::string joined = c_string(dynstr_, runpath_off);
      std::size_t pos = 0;
      while (pos <= joined.size()) {
        auto colon = joined.find(':', pos);
        if (colon == std::string::npos) colon = joined.size();
        if (colon > pos) img_.runpath.push_back(joined.substr(pos, colon - pos));
        pos = colon + 1;
      }
    }
    pie_flag_ = dyn_.count(DT_FLAGS_1) && (dyn_[DT_FLAGS_1] & DF_1_PIE);
  }

  // Number of dynamic symbols: section header if present, else the hash tables.
  std::size_t dynsym_count() const {
    for (const auto& s : sections_) {
      if (s.hdr.sh_type == SHT_DYNSYM && s.hdr.sh_entsize) return s.hdr.sh_size / s.hdr.sh_entsize;
    }
    if (auto it = dyn_.find(DT_HASH); it != dyn_.end()) {
      auto words = mapped(it->second, 8);
      std::uint32_t nchain;
      std::memcpy(&nchain, words.data() + 4, 4);
      return nchain;
    }
    if (auto it = dyn_.find(DT_GNU_HASH); it != dyn_.end()) return gnu_hash_count(it->second);
    return 0;
  }

  std::size_t gnu_hash_count(Addr at) const {
    auto head = mapped(at, 16);
    std::uint32_t nbuckets, symoffset, bloom_size;
    std::memcpy(&nbuckets, head.data(), 4);
    std::memcpy(&symoffset, head.data() + 4, 4);
    std::memcpy(&bloom_size, head.data() + 8, 4);
    Addr buckets = at + 16 + std::uint64_t{bloom_size} * 8;
    auto bucket_bytes = mapped(buckets, std::uint64_t{nbuckets} * 4);
    std::uint32_t last = 0;
    for (std::uint32_t i = 0; i < nbuckets; ++i) {
      std::uint32_t b;
      std::memcpy(&b, bucket_bytes.data() + i * 4, 4);
      last = std::max(last, b);
    }
    if (last < symoffset) return symoffset;
    Addr chains = buckets + std::uint64_t{nbuckets} * 4;
    for (std::uint32_t idx = last;; ++idx) {
      auto w = mapped(chains + std::uint64_t{idx - symoffset} * 4, 4);
      std::uint32_t h;
      std::memcpy(&h, w.data(), 4);
      if (h & 1u) return idx + 1;
    }
  }

  std::map<std::uint16_t, std::string> version_names() const {
    std::map<std::uint16_t, std::string> names;
    if (auto it = dyn_.find(DT_VERDEF); it != dyn_.end()) {
      std::uint64_t count = dyn_.count(DT_VERDEFNUM) ? dyn_.at(DT_VERDEFNUM) : 0;
      Addr at = it->second;
      for (std::uint64_t i = 0; i < count; ++i) {
        Elf64_Verdef vd;
        std::memcpy(&vd, mapped(at, sizeof vd).data(), sizeof vd);
        if (vd.vd_cnt > 0 && !(vd.vd_flags & VER_FLG_BASE)) {
          Elf64_Verdaux aux;
          std::memcpy(&aux, mapped(at + vd.vd_aux, sizeof aux).data(), sizeof aux);
          names[vd.vd_ndx] = c_string(dynstr_, aux.vda_name);
        }
        if (vd.vd_next == 0) break;
        at += vd.vd_next;
      }
    }
    if (auto it = dyn_.find(DT_VERNEED); it != dyn_.end()) {
      std::uint64_t count = dyn_.count(DT_VERNEEDNUM) ? dyn_.at(DT_VERNEEDNUM) : 0;
      Addr at = it->second;
      for (std::uint64_t i = 0; i < count; ++i) {
        Elf64_Verneed vn;
        std::memcpy(&vn, mapped(at, sizeof vn).data(), sizeof vn);
        Addr aux_at = at + vn.vn_aux;
        for (unsigned j = 0; j < vn.vn_cnt; ++j) {
          Elf64_Vernaux aux;
          std::memcpy(&aux, mapped(aux_at, sizeof aux).data(), sizeof aux);
          names[aux.vna_other] = c_string(dynstr_, aux.vna_name);
          if (aux.vna_next == 0) break;
          aux_at += aux.vna_next;
        }
        if (vn.vn_next == 0) break;
        at += vn.vn_next;
      }
    }
    return names;
  }

  bool address_mapped(Addr a) const {
    return std::any_of(img_.segments.begin(), img_.segments.end(),
                       [a](const Segment& s) { return a >= s.vaddr && a - s.vaddr < s.mem_size; });
  }

  void read_symbols() {
    std::set<std::pair<std::string, Addr>> seen;
    auto add = [&](const Elf64_Sym& sym, std::string name, bool exported, std::string version) {
      if (sym.st_shndx == SHN_UNDEF || sym.st_shndx == SHN_ABS || name.empty()) return;
      unsigned type = ELF64_ST_TYPE(sym.st_info);
      if (type == STT_SECTION || type == STT_FILE || type == STT_TLS) return;
      if (!address_mapped(sym.st_value)) return;
      if (!seen.insert({name, sym.st_value}).second) {
        if (exported) {
          for (auto& s : img_.symbols) {
            if (s.name == name && s.address == sym.st_value) {
              s.is_exported = true;
              if (s.version.empty()) s.version = version;
            }
          }
        }
        return;
      }
      SymbolDef def;
      def.name = std::move(name);
      def.address = sym.st_value;
      def.size = sym.st_size;
      def.is_function = type == STT_FUNC || type == STT_GNU_IFUNC;
      def.is_exported = exported;
      def.version = std::move(version);
      img_.symbols.push_back(std::move(def));
    };

    // Dynamic symbols first so exported ones carry their version tag.
    if (dyn_.count(DT_SYMTAB)) {
      std::size_t count = dynsym_count();
      auto table = mapped(dyn_[DT_SYMTAB], count * sizeof(Elf64_Sym));
      Bytes versym;
      if (dyn_.count(DT_VERSYM)) versym = mapped(dyn_[DT_VERSYM], count * 2);
      auto vnames = versym.empty() ? std::map<std::uint16_t, std::string>{} : version_names();
      for (std::size_t i = 0; i < count; ++i) {
        Elf64_Sym sym;
        std::memcpy(&sym, table.data() + i * sizeof sym, sizeof sym);
        std::string name = c_string(dynstr_, sym.st_name);
        dynsym_names_.push_back(name);
        std::string version;
        if (!versym.empty()) {
          std::uint16_t v;
          std::memcpy(&v, versym.data() + i * 2, 2);
          if (auto it = vnames.find(v & 0x7fff); it != vnames.end()) version = it->second;
        }
        unsigned type = ELF64_ST_TYPE(sym.st_info);
        unsigned bind = ELF64_ST_BIND(sym.st_info);
        bool exported = sym.st_shndx != SHN_UNDEF && sym.st_shndx != SHN_ABS &&
                        (type == STT_FUNC || type == STT_GNU_IFUNC) &&
                        (bind == STB_GLOBAL || bind == STB_WEAK) &&
                        ELF64_ST_VISIBILITY(sym.st_other) == STV_DEFAULT;
        if (exported && !name.empty()) {
          img_.exported.emplace(name, sym.st_value);
        }
        add(sym, std::move(name), exported, std::move(version));
      }
    }

    for (const auto& s : sections_) {
      if (s.hdr.sh_type != SHT_SYMTAB || s.hdr.sh_entsize != sizeof(Elf64_Sym)) continue;
      if (s.hdr.sh_link >= sections_.size()) malformed("symbol string table index");
      auto strtab = section_bytes(sections_[s.hdr.sh_link].hdr);
      auto table = section_bytes(s.hdr);
      for (std::size_t off = 0; off + sizeof(Elf64_Sym) <= table.size(); off += sizeof(Elf64_Sym)) {
        Elf64_Sym sym;
        std::memcpy(&sym, table.data() + off, sizeof sym);
        std::string name = c_string(strtab, sym.st_name);
        // Static symbol tables spell versions as "name@VER" / "name@@VER".
        std::string version;
        if (auto at = name.find('@'); at != std::string::npos) {
          auto vstart = name.find_first_not_of('@', at);
          version = vstart == std::string::npos ? "" : name.substr(vstart);
          name.resize(at);
        }
        add(sym, std::move(name), false, std::move(version));
      }
    }
    std::sort(img_.symbols.begin(), img_.symbols.end(), [](const SymbolDef& a, const SymbolDef& b) {
      return std::tie(a.address, a.name) < std::tie(b.address, b.name);
    });
  }

  void read_rela_table(Addr at, std::uint64_t size) {
    auto bytes = mapped(at, size);
    for (std::size_t off = 0; off + sizeof(Elf64_Rela) <= bytes.size(); off += sizeof(Elf64_Rela)) {
      Elf64_Rela r;
      std::memcpy(&r, bytes.data() + off, sizeof r);
      auto type = ELF64_R_TYPE(r.r_info);
      auto sym = ELF64_R_SYM(r.r_info);
      if (type == R_X86_64_JUMP_SLOT || type == R_X86_64_GLOB_DAT) {
        if (sym < dynsym_names_.size() && !dynsym_names_[sym].empty()) {
          img_.got_imports.emplace(r.r_offset, dynsym_names_[sym]);
        }
      } else if (type == R_X86_64_RELATIVE) {
        relative_.emplace(r.r_offset, static_cast<Addr>(r.r_addend));
      }
    }
  }

  void read_relocations() {
    if (dyn_.count(DT_JMPREL) && dyn_.count(DT_PLTRELSZ)) {
      read_rela_table(dyn_[DT_JMPREL], dyn_[DT_PLTRELSZ]);
    }
    if (dyn_.count(DT_RELA) && dyn_.count(DT_RELASZ)) {
      read_rela_table(dyn_[DT_RELA], dyn_[DT_RELASZ]);
    }
  }

  // Each PLT entry contains an indirect `jmp *GOT(%rip)`; the GOT slot's
  // relocation names the import.
  void scan_plt() {
    if (img_.got_imports.empty()) return;
    for (const auto& s : sections_) {
      if (s.name != ".plt" && s.name != ".plt.sec" && s.name != ".plt.got") continue;
      auto bytes = section_bytes(s.hdr);
      std::uint64_t entry = s.hdr.sh_entsize ? s.hdr.sh_entsize : 16;
      if (s.name == ".plt.got" && s.hdr.sh_entsize == 0) entry = 8;
      for (std::uint64_t base = 0; base + entry <= bytes.size(); base += entry) {
        for (std::uint64_t i = base; i + 6 <= base + entry; ++i) {
          if (bytes[i] != 0xff || bytes[i + 1] != 0x25) continue;
          std::int32_t disp;
          std::memcpy(&disp, bytes.data() + i + 2, 4);
          Addr slot = s.hdr.sh_addr + i + 6 + static_cast<std::int64_t>(disp);
          if (auto it = img_.got_imports.find(slot); it != img_.got_imports.end()) {
            img_.plt_map.emplace(it->second, s.hdr.sh_addr + base);
          }
          break;
        }
      }
    }
  }

  static std::uint64_t uleb(Bytes b, std::size_t& pos) {
    std::uint64_t result = 0;
    unsigned shift = 0;
    while (pos < b.size()) {
      std::uint8_t byte = b[pos++];
      if (shift < 64) result |= std::uint64_t{byte & 0x7fu} << shift;
      shift += 7;
      if (!(byte & 0x80)) break;
    }
    return result;
  }

  static std::int64_t sleb(Bytes b, std::size_t& pos) {
    std::int64_t result = 0;
    unsigned shift = 0;
    std::uint8_t byte = 0;
    while (pos < b.size()) {
      byte = b[pos++];
      if (shift < 64) result |= std::int64_t{byte & 0x7f} << shift;
      shift += 7;
      if (!(byte & 0x80)) break;
    }
    if (shift < 64 && (byte & 0x40)) result |= -(std::int64_t{1} << shift);
    return result;
  }

  // Reads a DW_EH_PE encoded pointer located at section address `here`.
  static std::optional<std::uint64_t> eh_pointer(Bytes b, std::size_t& pos, std::uint8_t enc,
                                                 Addr section_addr) {
    if (enc == 0xff) return std::nullopt;  // DW_EH_PE_omit
    Addr here = section_addr + pos;
    std::uint64_t value = 0;
    auto take = [&](std::size_t n, bool is_signed) -> bool {
      if (pos + n > b.size()) return false;
      std::uint64_t raw = 0;
      std::memcpy(&raw, b.data() + pos, n);
      pos += n;
      if (is_signed && n < 8 && (raw >> (n * 8 - 1)) & 1) raw |= ~std::uint64_t{0} << (n * 8);
      value = raw;
      return true;
    };
    bool ok = true;
    switch (enc & 0x0f) {
      case 0x00: ok = take(8, false); break;  // absptr
      case 0x01: value = uleb(b, pos); break;
      case 0x02: ok = take(2, false); break;
      case 0x03: ok = take(4, false); break;
      case 0x04: ok = take(8, false); break;
      case 0x09: value = static_cast<std::uint64_t>(sleb(b, pos)); break;
      case 0x0a: ok = take(2, true); break;
      case 0x0b: ok = take(4, true); break;
      case 0x0c: ok = take(8, true); break;
      default: return std::nullopt;
    }
    if (!ok) return std::nullopt;
    switch (enc & 0x70) {
      case 0x00: break;
      case 0x10: value += here; break;  // pcrel
      default: return std::nullopt;     // datarel/textrel/funcrel unused in .eh_frame
    }
    return value;
  }

  void read_unwind() {
    Bytes frame;
    Addr frame_addr = 0;
    if (const auto* s = section(".eh_frame"); s && s->hdr.sh_type != SHT_NOBITS) {
      frame = section_bytes(s->hdr);
      frame_addr = s->hdr.sh_addr;
    } else if (has_eh_frame_hdr_) {
      // Without section headers, find .eh_frame through .eh_frame_hdr and
      // parse up to the end of its segment.
      auto hdr = mapped(eh_frame_hdr_.p_vaddr, 4);
      std::size_t pos = 4;
      auto hdr_full = mapped(eh_frame_hdr_.p_vaddr, eh_frame_hdr_.p_filesz);
      auto ptr = eh_pointer(hdr_full, pos, hdr[1], eh_frame_hdr_.p_vaddr);
      if (!ptr) return;
      for (const auto& seg : img_.segments) {
        if (*ptr >= seg.vaddr && *ptr - seg.vaddr < seg.data.size()) {
          frame_addr = *ptr;
          frame = Bytes(seg.data).subspan(*ptr - seg.vaddr);
        }
      }
    }
    if (frame.empty()) return;

    std::map<std::size_t, std::uint8_t> cie_encoding;
    std::size_t pos = 0;
    while (pos + 4 <= frame.size()) {
      std::size_t record = pos;
      std::uint64_t length;
      std::uint32_t len32;
      std::memcpy(&len32, frame.data() + pos, 4);
      pos += 4;
      if (len32 == 0) break;  // terminator
      if (len32 == 0xffffffffu) {
        if (pos + 8 > frame.size()) break;
        std::memcpy(&length, frame.data() + pos, 8);
        pos += 8;
      } else {
        length = len32;
      }
      std::size_t body = pos;
      if (length > frame.size() - body) break;
      std::size_t next = body + length;
      std::uint32_t id;
      if (pos + 4 > next) break;
      std::memcpy(&id, frame.data() + pos, 4);
      pos += 4;
      if (id == 0) {
        cie_encoding[record] = parse_cie(frame.subspan(0, next), pos);
      } else {
        std::size_t cie = body - id;
        auto enc = cie_encoding.find(cie);
        if (enc != cie_encoding.end()) {
          auto begin = eh_pointer(frame, pos, enc->second, frame_addr);
          auto range = eh_pointer(frame, pos, enc->second & 0x0f, frame_addr);
          if (begin && range && *range > 0) img_.unwind_ranges.push_back({*begin, *range});
        }
      }
      pos = next;
    }
    std::sort(img_.unwind_ranges.begin(), img_.unwind_ranges.end(),
              [](const CodeRange& a, const CodeRange& b) { return a.start < b.start; });
  }

  // Returns the FDE pointer encoding declared by the CIE ('R' augmentation).
  static std::uint8_t parse_cie(Bytes b, std::size_t pos) {
    if (pos >= b.size()) return 0;
    std::uint8_t version = b[pos++];
    std::string aug;
    while (pos < b.size() && b[pos] != 0) aug.push_back(static_cast<char>(b[pos++]));
    ++pos;
    if (aug.find("eh") != std::string::npos) pos += 8;
    uleb(b, pos);  // code alignment
    sleb(b, pos);  // data alignment
    if (version == 1) ++pos; else uleb(b, pos);  // return register
    std::uint8_t fde_enc = 0;
    if (aug.empty() || aug[0] != 'z') return fde_enc;
    uleb(b, pos);  // augmentation data length
    for (char c : aug.substr(1)) {
      if (pos >= b.size()) break;
      if (c == 'R') {
        fde_enc = b[pos++];
      } else if (c == 'L') {
        ++pos;
      } else if (c == 'P') {
        std::uint8_t penc = b[pos++];
        // The personality pointer's value is irrelevant; only skip it.
        eh_pointer(b, pos, penc & 0x7f, 0);
      } else if (c != 'S' && c != 'B') {
        break;
      }
    }
    return fde_enc;
  }

  void read_init_functions() {
    auto add = [&](Addr a) {
      if (a != 0 && a != ~Addr{0}) img_.init_functions.push_back(a);
    };
    if (dyn_.count(DT_INIT)) add(dyn_[DT_INIT]);
    auto read_array = [&](int tag, int size_tag) {
      if (!dyn_.count(tag) || !dyn_.count(size_tag)) return;
      Addr base = dyn_[tag];
      for (std::uint64_t off = 0; off + 8 <= dyn_[size_tag]; off += 8) {
        if (auto rel = relative_.find(base + off); rel != relative_.end()) {
          add(rel->second);
        } else {
          auto bytes = mapped(base + off, 8);
          std::uint64_t v;
          std::memcpy(&v, bytes.data(), 8);
          add(v);
        }
      }
    };
    read_array(DT_PREINIT_ARRAY, DT_PREINIT_ARRAYSZ);
    read_array(DT_INIT_ARRAY, DT_INIT_ARRAYSZ);
    std::sort(img_.init_functions.begin(), img_.init_functions.end());
    img_.init_functions.erase(std::unique(img_.init_functions.begin(), img_.init_functions.end()),
                              img_.init_functions.end());
  }

  // Executable sections give tighter ranges than whole segments (which also
  // cover headers and read-only data on older layouts).
  void compute_code_ranges() {
    std::vector<CodeRange> ranges;
    for (const auto& s : sections_) {
      if ((s.hdr.sh_flags & SHF_ALLOC) && (s.hdr.sh_flags & SHF_EXECINSTR) &&
          s.hdr.sh_type == SHT_PROGBITS && s.hdr.sh_size > 0) {
        ranges.push_back({s.hdr.sh_addr, s.hdr.sh_size});
      }
    }
    if (ranges.empty()) {
      for (const auto& seg : img_.segments) {
        if (seg.executable && !seg.data.empty()) ranges.push_back({seg.vaddr, seg.data.size()});
      }
    }
    if (ranges.empty()) {
      throw Error(ErrorCode::NoCodeSegment, img_.path + ": no executable code");
    }
    std::sort(ranges.begin(), ranges.end(),
              [](const CodeRange& a, const CodeRange& b) { return a.start < b.start; });
    for (const auto& r : ranges) {
      if (!img_.code_ranges.empty() && r.start <= img_.code_ranges.back().end()) {
        auto& last = img_.code_ranges.back();
        last.size = std::max(last.end(), r.end()) - last.start;
      } else {
        img_.code_ranges.push_back(r);
      }
    }
    // Every code byte must be file-backed, or lifting would read garbage.
    for (const auto& r : img_.code_ranges) {
      bool backed = std::any_of(img_.segments.begin(), img_.segments.end(), [&](const Segment& s) {
        return r.start >= s.vaddr && r.end() <= s.vaddr + s.data.size();
      });
      if (!backed) malformed("code range " + hex(r.start) + " is not file-backed");
    }
    std::erase_if(img_.unwind_ranges, [&](const CodeRange& r) { return !img_.in_code(r.start); });
    std::erase_if(img_.init_functions, [&](Addr a) { return !img_.in_code(a); });
    for (auto it = img_.exported.begin(); it != img_.exported.end();) {
      it = img_.in_code(it->second) ? std::next(it) : img_.exported.erase(it);
    }
  }

  void classify() {
    bool dynamic = has_dynamic_ || !img_.interpreter.empty();
    if (ehdr_.e_type == ET_EXEC) {
      img_.kind = dynamic ? BinaryKind::DynamicExec : BinaryKind::StaticExec;
    } else if (!img_.interpreter.empty() || pie_flag_) {
      img_.kind = BinaryKind::PieExec;
    } else {
      img_.kind = BinaryKind::SharedObject;
    }
    if (img_.is_executable() && !img_.in_code(img_.entry_point)) {
      malformed("entry point " + hex(img_.entry_point) + " is outside code");
    }
  }

  Bytes file_;
  BinaryImage img_;
  Elf64_Ehdr ehdr_{};
  Elf64_Phdr dynamic_{};
  Elf64_Phdr eh_frame_hdr_{};
  bool has_dynamic_ = false;
  bool has_eh_frame_hdr_ = false;
  bool pie_flag_ = false;
  std::vector<SectionInfo> sections_;
  std::map<std::int64_t, std::uint64_t> dyn_;
  Bytes dynstr_;
  std::vector<std::string> dynsym_names_;
  std::map<Addr, Addr> relative_;
};

}  // namespace

std::string_view to_string(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::StaticExec: return "static-exec";
    case BinaryKind::DynamicExec: return "dynamic-exec";
    case BinaryKind::PieExec: return "pie-exec";
    case BinaryKind::SharedObject: return "shared-object";
  }
  return "unknown";
}

const CodeRange* BinaryImage::code_range_of(Addr a) const {
  auto it = std::upper_bound(code_ranges.begin(), code_ranges.end(), a,
                             [](Addr v, const CodeRange& r) { return v < r.start; });
  if (it == code_ranges.begin()) return nullptr;
  --it;
  return it->contains(a) ? &*it : nullptr;
}

std::span<const std::uint8_t> BinaryImage::code_bytes(Addr a) const {
  const CodeRange* r = code_range_of(a);
  if (!r) return {};
  for (const auto& seg : segments) {
    if (a >= seg.vaddr && a - seg.vaddr < seg.data.size()) {
      std::uint64_t avail = std::min<std::uint64_t>(seg.data.size() - (a - seg.vaddr), r->end() - a);
      return std::span<const std::uint8_t>(seg.data).subspan(a - seg.vaddr, avail);
    }
  }
  return {};
}

bool BinaryImage::is_mapped(Addr a) const {
  return std::any_of(segments.begin(), segments.end(),
                     [a](const Segment& s) { return a >= s.vaddr && a - s.vaddr < s.mem_size; });
}

namespace {

template <class T>
std::optional<T> read_mem(const std::vector<Segment>& segments, Addr a) {
  for (const auto& s : segments) {
    if (a < s.vaddr || a - s.vaddr >= s.mem_size) continue;
    std::uint64_t off = a - s.vaddr;
    if (s.mem_size - off < sizeof(T)) return std::nullopt;
    std::uint8_t buf[sizeof(T)] = {};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      if (off + i < s.data.size()) buf[i] = s.data[off + i];
    }
    T out;
    std::memcpy(&out, buf, sizeof(T));
    return out;
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::uint64_t> BinaryImage::read_u64(Addr a) const {
  return read_mem<std::uint64_t>(segments, a);
}

std::optional<std::int32_t> BinaryImage::read_i32(Addr a) const {
  return read_mem<std::int32_t>(segments, a);
}

std::string BinaryImage::library_name() const {
  if (!soname.empty()) return soname;
  return std::filesystem::path(path).filename().string();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

BinaryImage parse_binary(std::span<const std::uint8_t> file, std::string path) {
  return ElfParser(file, std::move(path)).run();
}

BinaryImage load_binary(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return parse_binary(bytes, path.string());
}

std::vector<Addr> list_entry_points(const BinaryImage& img) {
  if (img.is_executable()) return {img.entry_point};
  std::set<Addr> entries;
  for (const auto& [name, addr] : img.exported) entries.insert(addr);
  return {entries.begin(), entries.end()};
}

std::uint64_t content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t file_content_hash(const std::filesystem::path& path) {
  return content_hash(read_file(path));
}

}  // namespace sysid
