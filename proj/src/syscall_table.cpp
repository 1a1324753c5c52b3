#include "sysid/syscall_table.hpp"

#include <charconv>

#include "sysid/error.hpp"

namespace sysid {
namespace detail {
struct EmbeddedTable {
  const char* tag;
  const char* text;
};
extern const EmbeddedTable kEmbeddedTables[];
extern const std::size_t kEmbeddedTableCount;
}  // namespace detail

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

const std::map<std::string, SyscallTable, std::less<>>& embedded() {
  static const auto tables = [] {
    std::map<std::string, SyscallTable, std::less<>> out;
    for (std::size_t i = 0; i < detail::kEmbeddedTableCount; ++i) {
      const auto& t = detail::kEmbeddedTables[i];
      out.emplace(t.tag, SyscallTable::parse(t.text, t.tag));
    }
    return out;
  }();
  return tables;
}

// Orders "5.15" < "6.10" numerically, component by component.
bool version_less(std::string_view a, std::string_view b) {
  while (!a.empty() || !b.empty()) {
    unsigned x = 0, y = 0;
    auto ra = std::from_chars(a.data(), a.data() + a.size(), x);
    auto rb = std::from_chars(b.data(), b.data() + b.size(), y);
    if (x != y) return x < y;
    a.remove_prefix(static_cast<std::size_t>(ra.ptr - a.data()));
    b.remove_prefix(static_cast<std::size_t>(rb.ptr - b.data()));
    if (!a.empty()) a.remove_prefix(1);
    if (!b.empty()) b.remove_prefix(1);
  }
  return false;
}

}  // namespace

SyscallTable SyscallTable::parse(std::string_view text, std::string tag) {
  SyscallTable table;
  table.tag_ = std::move(tag);
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    SyscallNumber nr = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), nr);
    auto name = trim(line.substr(static_cast<std::size_t>(ptr - line.data())));
    if (ec != std::errc{} || name.empty() || name.find_first_of(" \t") != std::string_view::npos) {
      throw Error(ErrorCode::UnknownSyscallTable,
                  "syscall table " + table.tag_ + ": bad line " + std::to_string(line_no));
    }
    table.by_number_[nr] = std::string(name);
    table.by_name_[std::string(name)] = nr;
  }
  return table;
}

const SyscallTable& SyscallTable::for_kernel(std::string_view tag) {
  const auto& tables = embedded();
  auto it = tables.find(tag);
  if (it == tables.end()) {
    throw Error(ErrorCode::UnknownSyscallTable, "no syscall table for kernel " + std::string(tag));
  }
  return it->second;
}

const SyscallTable& SyscallTable::latest() {
  const auto& tables = embedded();
  if (tables.empty()) throw Error(ErrorCode::UnknownSyscallTable, "no syscall tables embedded");
  auto best = tables.begin();
  for (auto it = tables.begin(); it != tables.end(); ++it) {
    if (version_less(best->first, it->first)) best = it;
  }
  return best->second;
}

std::vector<std::string> SyscallTable::available_tags() {
  std::vector<std::string> tags;
  for (const auto& [tag, table] : embedded()) tags.push_back(tag);
  return tags;
}

std::optional<std::string_view> SyscallTable::name(SyscallNumber nr) const {
  auto it = by_number_.find(nr);
  if (it == by_number_.end()) return std::nullopt;
  return it->second;
}

std::optional<SyscallNumber> SyscallTable::number(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

SyscallNumber SyscallTable::max_number() const {
  return by_number_.empty() ? 0 : by_number_.rbegin()->first;
}

SyscallSet SyscallTable::all() const {
  SyscallSet out;
  for (const auto& [nr, name] : by_number_) out.insert(nr);
  return out;
}

std::string SyscallTable::display_name(SyscallNumber nr) const {
  if (auto n = name(nr)) return std::string(*n);
  return "syscall_" + std::to_string(nr);
}

}  // namespace sysid
