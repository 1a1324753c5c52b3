#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sysid/cfg.hpp"
#include "sysid/shared_iface.hpp"
#include "sysid/syscall_id.hpp"

namespace sysid {

struct AnalyzeOptions {
  IdentifyOptions identify;
  CfgOptions cfg;
  // Directory holding <lib>.iface.json files; fresh interfaces are written
  // back to it when `write_interfaces` is set.
  std::optional<std::filesystem::path> iface_dir;
  bool write_interfaces = false;
  std::vector<std::filesystem::path> lib_dirs;  // extra library search paths
  std::vector<std::filesystem::path> dlopen_libs;
  bool loader_baseline = true;
  SyscallSet loader_baseline_set = default_loader_baseline();
};

/// Everything known about one analyzed binary.
struct ProgramAnalysis {
  std::shared_ptr<const BinaryImage> image;
  Cfg cfg;
  ProgramIdentification ident;
  std::optional<LinkResult> link;
  SyscallSet syscalls;
  bool complete = true;
  std::map<std::uint64_t, std::set<std::string>> provenance;
  std::map<std::string, SharedInterface> interfaces;
  std::map<std::string, std::string> interface_origin;  // library -> "cache" | "analyzed"
  std::map<std::string, SyscallSet> module_syscalls;      // dlopen module -> syscalls
  Diagnostics diagnostics;
};

ProgramAnalysis analyze_program(const std::filesystem::path& path, const AnalyzeOptions& opts = {});

}  // namespace sysid
