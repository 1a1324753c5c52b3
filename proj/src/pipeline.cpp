#include "sysid/pipeline.hpp"

#include <deque>

#include "sysid/error.hpp"

namespace sysid {
namespace {

class InterfaceStore {
 public:
  InterfaceStore(const AnalyzeOptions& opts, ProgramAnalysis& out) : opts_(opts), out_(out) {}

  // Makes interfaces available for `needed` and everything they need.
  void require(const std::vector<std::string>& needed, const std::vector<std::filesystem::path>& dirs) {
    std::deque<std::pair<std::string, std::vector<std::filesystem::path>>> queue;
    for (const auto& n : needed) queue.emplace_back(n, dirs);
    while (!queue.empty()) {
      auto [name, search] = queue.front();
      queue.pop_front();
      if (out_.interfaces.count(name) || failed_.count(name)) continue;
      auto lib = find_library(name, search);
      auto iface = obtain(name, lib);
      if (!iface) {
        failed_.insert(name);
        continue;
      }
      std::vector<std::filesystem::path> next = search;
      if (lib) {
        try {
          auto img = load_binary(*lib);
          next = library_search_dirs(img, search);
        } catch (const Error&) {
        }
      }
      for (const auto& d : iface->needed) queue.emplace_back(d, next);
      out_.interfaces.emplace(name, std::move(*iface));
    }
  }

  std::optional<SharedInterface> analyze_module(const std::filesystem::path& path,
                                                const std::vector<std::filesystem::path>& dirs) {
    try {
      auto iface = analyze_library(path, opts_.identify, dirs);
      auto img = load_binary(path);
      require(iface.needed, library_search_dirs(img, dirs));
      return iface;
    } catch (const Error& e) {
      out_.diagnostics.push_back({Diagnostic::Severity::Error, "dlopen-module", std::nullopt,
                                  path.string() + ": " + e.what()});
      return std::nullopt;
    }
  }

 private:
  std::optional<SharedInterface> obtain(const std::string& name,
                                        const std::optional<std::filesystem::path>& lib) {
    if (opts_.iface_dir) {
      auto cached = *opts_.iface_dir / interface_file_name(name);
      std::error_code ec;
      if (std::filesystem::is_regular_file(cached, ec)) {
        auto iface = load_interface(cached);
        // A cached interface is trusted only for the exact file it was built from.
        if (!lib || file_content_hash(*lib) == iface.interface_id) {
          out_.interface_origin[name] = "cache";
          return iface;
        }
        out_.diagnostics.push_back({Diagnostic::Severity::Info, "stale-interface", std::nullopt,
                                    cached.string() + " does not match " + lib->string()});
      }
    }
    if (!lib) return std::nullopt;
    auto iface = analyze_library(*lib, opts_.identify, opts_.lib_dirs);
    out_.interface_origin[name] = "analyzed";
    if (opts_.iface_dir && opts_.write_interfaces) {
      std::filesystem::create_directories(*opts_.iface_dir);
      save_interface(iface, *opts_.iface_dir / interface_file_name(name));
    }
    return iface;
  }

  const AnalyzeOptions& opts_;
  ProgramAnalysis& out_;
  std::set<std::string> failed_;
};

void identify(ProgramAnalysis& a, const AnalyzeOptions& opts) {
  a.cfg = build_cfg(a.image, opts.cfg);
  a.ident = identify_program(a.cfg, opts.identify);
}

}  // namespace

ProgramAnalysis analyze_program(const std::filesystem::path& path, const AnalyzeOptions& opts) {
  ProgramAnalysis a;
  a.image = std::make_shared<const BinaryImage>(load_binary(path));
  AnalyzeOptions local = opts;
  identify(a, local);

  if (!a.image->is_dynamic() && opts.dlopen_libs.empty()) {
    a.syscalls = a.ident.syscalls;
    a.complete = a.ident.complete;
    for (const auto& [addr, site] : a.ident.sites) {
      for (auto n : site.numbers) a.provenance[n].insert("site:" + hex(addr));
    }
    a.diagnostics = a.ident.diagnostics;
    return a;
  }

  InterfaceStore store(opts, a);
  auto dirs = library_search_dirs(*a.image, opts.lib_dirs);
  store.require(a.image->dyn_deps, dirs);
  LinkOptions lopts;
  lopts.identify = opts.identify;
  if (opts.loader_baseline) lopts.loader_baseline = opts.loader_baseline_set;
  for (const auto& m : opts.dlopen_libs) {
    if (auto iface = store.analyze_module(m, dirs)) lopts.dlopen_modules.push_back(std::move(*iface));
  }

  for (;;) {
    a.link = link_and_resolve(a.cfg, a.ident, a.interfaces, lopts);
    if (!a.link->needs_callback_roots) break;
    // A library may call back into our address-taken functions.
    std::set<Addr> roots(a.cfg.entry_nodes.begin(), a.cfg.entry_nodes.end());
    bool grew = false;
    for (Addr at : a.cfg.active_addresses_taken) {
      if (!roots.count(at)) {
        local.cfg.extra_roots.push_back(at);
        grew = true;
      }
    }
    if (!grew) break;
    identify(a, local);
  }

  a.syscalls = a.link->program_syscalls;
  a.complete = a.link->complete;
  a.provenance = a.link->provenance;
  a.module_syscalls = a.link->module_syscalls;
  Diagnostics diags = a.ident.diagnostics;
  diags.insert(diags.end(), a.link->diagnostics.begin(), a.link->diagnostics.end());
  diags.insert(diags.end(), a.diagnostics.begin(), a.diagnostics.end());
  a.diagnostics = std::move(diags);
  for (const auto& d : a.diagnostics) {
    if (d.code == "dlopen-module") a.complete = false;
  }
  return a;
}

}  // namespace sysid
