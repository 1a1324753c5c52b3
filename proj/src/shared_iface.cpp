#include "sysid/shared_iface.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <fstream>
#include <queue>
#include <sstream>

#include "json.hpp"

#include "sysid/error.hpp"
#include "sysid/syscall_table.hpp"

namespace sysid {

using nlohmann::json;

namespace {

std::string dec(Addr a) { return std::to_string(a); }

Addr parse_addr(const json& j) {
  const auto& s = j.get_ref<const std::string&>();
  std::size_t used = 0;
  unsigned long long v = std::stoull(s, &used, 10);
  if (used != s.size()) throw std::invalid_argument("address");
  return v;
}

template <class C>
json addr_array(const C& c) {
  json a = json::array();
  for (Addr x : c) a.push_back(dec(x));
  return a;
}

template <class C>
void read_addrs(const json& j, C& out) {
  for (const auto& x : j) out.insert(out.end(), parse_addr(x));
}

json number_array(const SyscallSet& s) {
  json a = json::array();
  for (auto n : s) a.push_back(n);
  return a;
}

}  // namespace

std::string to_json(const SharedInterface& iface) {
  json j;
  j["schema_version"] = iface.schema_version;
  j["library"] = iface.library;
  j["interface_id"] = dec(iface.interface_id);
  j["needed"] = iface.needed;
  json graph = json::object();
  for (const auto& [a, f] : iface.func_graph) {
    graph[dec(a)] = {{"syscalls", number_array(f.syscalls)},
                     {"callees", addr_array(f.callees)},
                     {"callers", addr_array(f.callers)}};
  }
  j["func_graph"] = std::move(graph);
  json symbols = json::object();
  for (const auto& [n, a] : iface.symbols) symbols[n] = dec(a);
  j["symbols"] = std::move(symbols);
  j["symbol_versions"] = iface.symbol_versions;
  json ats = json::object();
  for (const auto& [a, list] : iface.at_triggers) ats[dec(a)] = addr_array(list);
  j["at_triggers"] = std::move(ats);
  j["unresolved_sites"] = addr_array(iface.unresolved_sites);
  j["indirect_callers"] = addr_array(iface.indirect_callers);
  j["wrappers"] = addr_array(iface.wrappers);
  json params = json::object();
  for (const auto& [a, p] : iface.wrapper_params) params[dec(a)] = to_string(p);
  j["wrapper_params"] = std::move(params);
  json ext = json::object();
  for (const auto& [a, by_lib] : iface.external_refs) ext[dec(a)] = by_lib;
  j["external_refs"] = std::move(ext);
  json plt = json::object();
  for (const auto& [n, a] : iface.plt_relocs) plt[n] = dec(a);
  j["plt_relocs"] = std::move(plt);
  j["poisoned"] = addr_array(iface.poisoned);
  return j.dump(2) + "\n";
}

SharedInterface interface_from_json(std::string_view text) {
  SharedInterface out;
  try {
    json j = json::parse(text);
    out.schema_version = j.at("schema_version").get<int>();
    if (out.schema_version != kInterfaceSchemaVersion) {
      throw Error(ErrorCode::InterfaceFormat,
                  "unsupported interface schema version " + std::to_string(out.schema_version));
    }
    out.library = j.at("library").get<std::string>();
    out.interface_id = parse_addr(j.at("interface_id"));
    out.needed = j.at("needed").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("func_graph").items()) {
      FunctionSummary f;
      for (const auto& n : v.at("syscalls")) f.syscalls.insert(n.get<std::uint64_t>());
      read_addrs(v.at("callees"), f.callees);
      read_addrs(v.at("callers"), f.callers);
      out.func_graph[std::stoull(k)] = std::move(f);
    }
    for (const auto& [k, v] : j.at("symbols").items()) out.symbols[k] = parse_addr(v);
    out.symbol_versions = j.at("symbol_versions").get<std::map<std::string, std::string>>();
    for (const auto& [k, v] : j.at("at_triggers").items()) read_addrs(v, out.at_triggers[std::stoull(k)]);
    read_addrs(j.at("unresolved_sites"), out.unresolved_sites);
    read_addrs(j.at("indirect_callers"), out.indirect_callers);
    read_addrs(j.at("wrappers"), out.wrappers);
    for (const auto& [k, v] : j.at("wrapper_params").items()) {
      auto p = parse_param_location(v.get<std::string>());
      if (!p) throw Error(ErrorCode::InterfaceFormat, "bad wrapper parameter '" + v.get<std::string>() + "'");
      out.wrapper_params[std::stoull(k)] = *p;
    }
    for (const auto& [k, v] : j.at("external_refs").items()) {
      out.external_refs[std::stoull(k)] = v.get<std::map<std::string, std::vector<std::string>>>();
    }
    for (const auto& [k, v] : j.at("plt_relocs").items()) out.plt_relocs[k] = parse_addr(v);
    read_addrs(j.at("poisoned"), out.poisoned);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::InterfaceFormat, std::string("malformed interface: ") + e.what());
  }
  return out;
}

void save_interface(const SharedInterface& iface, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << to_json(iface);
}

SharedInterface load_interface(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return interface_from_json({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

std::string interface_file_name(const std::string& library) { return library + ".iface.json"; }

SharedInterface make_interface(const Cfg& cfg, const ProgramIdentification& ident,
                               const std::map<std::string, std::string>& providers) {
  const BinaryImage& img = *cfg.image;
  SharedInterface out;
  out.library = img.library_name();
  out.interface_id = file_content_hash(img.path);
  out.needed = img.dyn_deps;
  out.symbols = img.exported;
  for (const auto& s : img.symbols) {
    if (s.is_exported && !s.version.empty() && img.exported.count(s.name)) {
      out.symbol_versions[s.name] = s.version;
    }
  }
  out.plt_relocs = img.plt_map;

  auto is_plt = [&](Addr f) { return cfg.plt_blocks.count(f) > 0; };
  auto function_holding = [&](Addr a) -> const FuncInfo* {
    const LiftedBlock* b = cfg.block_containing(a);
    return b ? cfg.function_of(b->start) : nullptr;
  };
  // PLT stubs bound to a local definition resolve to it.
  auto plt_binding = [&](Addr stub) -> std::optional<Addr> {
    for (const auto& e : cfg.out_edges(stub)) {
      if (e.kind == EdgeKind::Jump) {
        if (const FuncInfo* g = cfg.function_of(e.dst)) return g->entry;
      }
    }
    return std::nullopt;
  };
  auto add_external = [&](Addr f, const std::string& name) {
    auto it = providers.find(name);
    auto& names = out.external_refs[f][it == providers.end() ? std::string() : it->second];
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  };

  std::set<Addr> indirect;
  for (const auto& f : cfg.functions) {
    if (is_plt(f.entry)) continue;
    auto& node = out.func_graph[f.entry];
    std::set<Addr> ats;
    for (Addr b : f.blocks) {
      const LiftedBlock& blk = cfg.blocks.at(b);
      for (Addr at : blk.addresses_taken_here) {
        if (const FuncInfo* g = function_holding(at); g && !is_plt(g->entry)) ats.insert(g->entry);
      }
      if (cfg.unresolved_indirects.count(b)) indirect.insert(f.entry);
      if (auto it = cfg.got_call_blocks.find(b); it != cfg.got_call_blocks.end()) {
        bool local = false;
        for (const auto& e : cfg.out_edges(b)) {
          if (e.kind == EdgeKind::Call || e.kind == EdgeKind::Jump) {
            if (const FuncInfo* g = cfg.function_of(e.dst); g && g->entry != f.entry) {
              node.callees.insert(g->entry);
              local = true;
            }
          }
        }
        if (!local) add_external(f.entry, it->second);
      }
      for (const auto& e : cfg.out_edges(b)) {
        if (e.kind == EdgeKind::IndirectResolved || e.kind == EdgeKind::ReturnTo) continue;
        const FuncInfo* g = cfg.function_of(e.dst);
        if (!g || g->entry == f.entry) continue;
        if (is_plt(g->entry)) {
          if (auto local = plt_binding(g->entry)) {
            node.callees.insert(*local);
          } else {
            add_external(f.entry, cfg.plt_blocks.at(g->entry));
          }
        } else {
          node.callees.insert(g->entry);
        }
      }
    }
    if (!ats.empty()) out.at_triggers[f.entry] = {ats.begin(), ats.end()};
    if (f.poisoned) out.poisoned.push_back(f.entry);
  }
  out.indirect_callers = {indirect.begin(), indirect.end()};
  for (auto& [a, f] : out.func_graph) {
    for (Addr c : f.callees) {
      if (auto it = out.func_graph.find(c); it != out.func_graph.end()) it->second.callers.insert(a);
    }
  }
  for (auto& [a, refs] : out.external_refs) {
    for (auto& [lib, names] : refs) std::sort(names.begin(), names.end());
  }

  std::set<Addr> unresolved;
  for (const auto& [addr, site] : ident.sites) {
    if (!site.resolved()) {
      unresolved.insert(site.function);
      continue;
    }
    for (const auto& [fn, nums] : site.by_function) {
      Addr owner = out.func_graph.count(fn) ? fn : site.function;
      out.func_graph[owner].syscalls.insert(nums.begin(), nums.end());
    }
  }
  out.unresolved_sites = {unresolved.begin(), unresolved.end()};
  for (const auto& [fn, w] : ident.wrappers) {
    out.wrappers.push_back(fn);
    out.wrapper_params[fn] = w.param_location;
  }
  return out;
}

std::optional<std::filesystem::path> find_library(const std::string& name,
                                                  const std::vector<std::filesystem::path>& dirs) {
  std::vector<std::filesystem::path> all = dirs;
  for (const char* d : {"/lib/x86_64-linux-gnu", "/usr/lib/x86_64-linux-gnu", "/lib64", "/usr/lib64",
                        "/lib", "/usr/lib"}) {
    all.emplace_back(d);
  }
  std::error_code ec;
  for (const auto& d : all) {
    auto p = d / name;
    if (std::filesystem::is_regular_file(p, ec)) return p;
  }
  return std::nullopt;
}

std::vector<std::filesystem::path> library_search_dirs(const BinaryImage& img,
                                                       const std::vector<std::filesystem::path>& extra) {
  std::vector<std::filesystem::path> out;
  auto origin = std::filesystem::path(img.path).parent_path();
  for (const auto& r : img.runpath) {
    std::string dir = r;
    for (const char* tok : {"$ORIGIN", "${ORIGIN}"}) {
      for (auto pos = dir.find(tok); pos != std::string::npos; pos = dir.find(tok)) {
        dir.replace(pos, std::string_view(tok).size(), origin.string());
      }
    }
    out.emplace_back(dir.empty() ? "." : dir);
  }
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

SharedInterface analyze_library(const std::filesystem::path& path, const IdentifyOptions& opts,
                                const std::vector<std::filesystem::path>& search_dirs) {
  auto img = std::make_shared<const BinaryImage>(load_binary(path));
  if (img->kind != BinaryKind::SharedObject) {
    throw Error(ErrorCode::InvalidArgument, path.string() + " is not a shared object");
  }
  // Functions whose address reachable code takes may be called back from
  // other modules; grow the root set until it is stable.
  CfgOptions copts;
  Cfg cfg = build_cfg(img, copts);
  for (;;) {
    std::set<Addr> roots(cfg.entry_nodes.begin(), cfg.entry_nodes.end());
    std::vector<Addr> extra;
    for (Addr a : cfg.active_addresses_taken) {
      if (!roots.count(a)) extra.push_back(a);
    }
    if (extra.empty()) break;
    copts.extra_roots.insert(copts.extra_roots.end(), extra.begin(), extra.end());
    cfg = build_cfg(img, copts);
  }
  auto ident = identify_program(cfg, opts);

  std::map<std::string, std::string> providers;
  auto dirs = library_search_dirs(*img, search_dirs);
  std::deque<std::string> queue(img->dyn_deps.begin(), img->dyn_deps.end());
  std::set<std::string> seen(queue.begin(), queue.end());
  while (!queue.empty()) {
    std::string dep = queue.front();
    queue.pop_front();
    auto p = find_library(dep, dirs);
    if (!p) continue;
    try {
      BinaryImage d = load_binary(*p);
      for (const auto& [name, a] : d.exported) providers.emplace(name, dep);
      for (const auto& n : d.dyn_deps) {
        if (seen.insert(n).second) queue.push_back(n);
      }
    } catch (const Error&) {
      continue;  // unreadable dependency: references stay unattributed
    }
  }
  return make_interface(cfg, ident, providers);
}

DepDag build_dep_dag(const std::string& root, const std::vector<std::string>& root_needed,
                     const std::map<std::string, std::vector<std::string>>& needed) {
  DepDag dag;
  dag.root = root;
  // Breadth-first discovery gives the loader's lookup order.
  std::map<std::string, std::vector<std::string>> adj{{root, root_needed}};
  std::deque<std::string> queue(root_needed.begin(), root_needed.end());
  std::set<std::string> seen(queue.begin(), queue.end());
  while (!queue.empty()) {
    std::string n = queue.front();
    queue.pop_front();
    dag.search_order.push_back(n);
    auto it = needed.find(n);
    adj[n] = it == needed.end() ? std::vector<std::string>{} : it->second;
    for (const auto& d : adj[n]) {
      if (seen.insert(d).second) queue.push_back(d);
    }
  }

  // Tarjan SCCs merge NEEDED cycles into one analysis unit.
  std::map<std::string, int> index, low;
  std::map<std::string, std::string> unit_of;
  std::vector<std::string> stack;
  std::set<std::string> on_stack;
  int counter = 0;
  std::function<void(const std::string&)> strong = [&](const std::string& v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (const auto& w : adj[v]) {
      if (!index.count(w)) {
        strong(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> comp;
      std::string w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      std::string name = comp.front();
      for (std::size_t i = 1; i < comp.size(); ++i) name += "+" + comp[i];
      for (const auto& m : comp) unit_of[m] = name;
      dag.members[name] = comp;
    }
  };
  strong(root);

  std::map<std::string, std::set<std::string>> deps_of, dependents_of;
  for (const auto& [v, ds] : adj) {
    for (const auto& d : ds) {
      const auto& a = unit_of[v];
      const auto& b = unit_of[d];
      if (a == b) continue;
      dag.edges.insert({a, b});
      deps_of[a].insert(b);
      dependents_of[b].insert(a);
    }
  }
  const std::string& root_unit = unit_of[root];
  dag.nodes.push_back(root_unit);
  for (const auto& [name, m] : dag.members) {
    if (name != root_unit) dag.nodes.push_back(name);
  }
  // Kahn's algorithm; the priority queue makes the order deterministic.
  std::map<std::string, std::size_t> remaining;
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& n : dag.nodes) {
    remaining[n] = deps_of[n].size();
    if (remaining[n] == 0) ready.push(n);
  }
  while (!ready.empty()) {
    std::string n = ready.top();
    ready.pop();
    dag.order.push_back(n);
    for (const auto& up : dependents_of[n]) {
      if (--remaining[up] == 0) ready.push(up);
    }
  }
  return dag;
}

SyscallSet default_loader_baseline() {
  static const char* const kNames[] = {
      "read",          "close",     "stat",        "fstat",           "mmap",
      "mprotect",      "munmap",    "brk",         "pread64",         "access",
      "open",          "readlink",  "arch_prctl",  "set_tid_address", "openat",
      "newfstatat",    "set_robust_list", "prlimit64", "getrandom",   "rseq",
  };
  const auto& table = SyscallTable::latest();
  SyscallSet out;
  for (const char* n : kNames) {
    if (auto nr = table.number(n)) out.insert(*nr);
  }
  return out;
}

namespace {

class Linker {
 public:
  Linker(const Cfg& exe_cfg, const ProgramIdentification& exe_ident,
         const std::map<std::string, SharedInterface>& ifaces, const LinkOptions& opts)
      : cfg_(exe_cfg), ident_(exe_ident), opts_(opts) {
    for (const auto& [name, iface] : ifaces) libs_[name] = &iface;
    for (const auto& m : opts.dlopen_modules) libs_[m.library] = &m;
  }

  LinkResult run() {
    build_dag();
    const auto exe_reachable = cfg_.reachable_from_entries();
    bind_executable(exe_reachable);
    for (const auto& m : opts_.dlopen_modules) {
      for (const auto& [name, a] : m.symbols) mark(m.library, a);
    }
    bool exe_indirect = false;
    for (Addr b : cfg_.unresolved_indirects) exe_indirect |= exe_reachable.count(b) > 0;
    propagate(exe_indirect);
    collect();
    return std::move(out_);
  }

 private:
  void build_dag() {
    std::map<std::string, std::vector<std::string>> needed;
    std::vector<std::string> missing;
    std::deque<std::string> queue(cfg_.image->dyn_deps.begin(), cfg_.image->dyn_deps.end());
    for (const auto& m : opts_.dlopen_modules) {
      queue.push_back(m.library);
      for (const auto& d : m.needed) queue.push_back(d);
    }
    std::set<std::string> seen;
    while (!queue.empty()) {
      std::string n = queue.front();
      queue.pop_front();
      if (!seen.insert(n).second) continue;
      auto it = libs_.find(n);
      if (it == libs_.end()) {
        missing.push_back(n);
        continue;
      }
      needed[n] = it->second->needed;
      for (const auto& d : it->second->needed) queue.push_back(d);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw Error(ErrorCode::MissingInterface, "no interface for: " + list);
    }
    std::vector<std::string> root_needed = cfg_.image->dyn_deps;
    for (const auto& m : opts_.dlopen_modules) root_needed.push_back(m.library);
    out_.dag = build_dep_dag(cfg_.image->library_name(), root_needed, needed);
    search_ = out_.dag.search_order;
  }

  // Global-scope symbol lookup in loader order.
  std::optional<std::pair<std::string, Addr>> provider(const std::string& name) const {
    for (const auto& lib : search_) {
      const auto* iface = libs_.at(lib);
      if (auto it = iface->symbols.find(name); it != iface->symbols.end()) {
        return std::pair{lib, it->second};
      }
    }
    return std::nullopt;
  }

  bool mark(const std::string& lib, Addr f) {
    const auto* iface = libs_.at(lib);
    if (!iface->func_graph.count(f)) return false;
    if (!out_.reachable[lib].insert(f).second) return false;
    work_[lib].push_back(f);
    return true;
  }

  void bind_executable(const std::set<Addr>& reachable) {
    std::set<std::string> unbound;
    for (Addr b : reachable) {
      auto name = cfg_.import_of(b);
      if (!name) continue;
      auto p = provider(*name);
      if (!p) {
        unbound.insert(*name);
        continue;
      }
      mark(p->first, p->second);
      auto& set = out_.import_syscalls[*name];
      const auto* iface = libs_.at(p->first);
      auto w = iface->wrapper_params.find(p->second);
      if (w == iface->wrapper_params.end()) continue;
      // The import is a syscall wrapper: recover its parameter at our call sites.
      const LiftedBlock& blk = cfg_.blocks.at(b);
      bool stub = cfg_.plt_blocks.count(b) > 0;
      Addr target = stub ? b : blk.instructions.back().address;
      Query q = stub ? w->second.at_entry() : w->second.at_call();
      auto r = backward_search(cfg_, target, q, opts_.identify, &reachable, false);
      out_.diagnostics.insert(out_.diagnostics.end(), r.diagnostics.begin(), r.diagnostics.end());
      if (r.unresolved) {
        out_.complete = false;
        out_.diagnostics.push_back({Diagnostic::Severity::Warning, "unresolved-site", b,
                                    "wrapper import " + *name + ": " + *r.unresolved});
        continue;
      }
      set.insert(r.numbers.begin(), r.numbers.end());
      for (auto n : r.numbers) out_.provenance[n].insert("wrapper-call:" + *name);
    }
    for (const auto& n : unbound) {
      out_.diagnostics.push_back({Diagnostic::Severity::Warning, "unbound-import", std::nullopt,
                                  "no dependency exports " + n});
    }
  }

  void propagate(bool exe_indirect) {
    bool indirect = exe_indirect;
    for (bool changed = true; changed;) {
      changed = false;
      // Dependents before dependencies: reachability flows downward.
      for (auto unit = out_.dag.order.rbegin(); unit != out_.dag.order.rend(); ++unit) {
        auto members = out_.dag.members.find(*unit);
        if (members == out_.dag.members.end()) continue;
        for (bool inner = true; inner;) {
          inner = false;
          for (const auto& lib : members->second) {
            if (!libs_.count(lib)) continue;
            inner |= drain(lib, indirect);
          }
          changed |= inner;
        }
      }
      if (indirect) {
        // Any reachable indirect call may target any active address taken.
        for (const auto& [lib, funcs] : out_.reachable) {
          const auto* iface = libs_.at(lib);
          std::vector<Addr> snapshot(funcs.begin(), funcs.end());
          for (Addr f : snapshot) {
            auto it = iface->at_triggers.find(f);
            if (it == iface->at_triggers.end()) continue;
            for (Addr t : it->second) changed |= mark(lib, t);
          }
        }
      }
    }
  }

  bool drain(const std::string& lib, bool& indirect) {
    bool any = false;
    const auto* iface = libs_.at(lib);
    auto& work = work_[lib];
    std::set<Addr> indirect_callers(iface->indirect_callers.begin(), iface->indirect_callers.end());
    std::set<Addr> wrappers(iface->wrappers.begin(), iface->wrappers.end());
    while (!work.empty()) {
      Addr f = work.back();
      work.pop_back();
      any = true;
      if (indirect_callers.count(f)) {
        indirect = true;
        out_.needs_callback_roots = true;
      }
      for (Addr c : iface->func_graph.at(f).callees) mark(lib, c);
      auto ext = iface->external_refs.find(f);
      if (ext == iface->external_refs.end()) continue;
      for (const auto& [from, names] : ext->second) {
        for (const auto& n : names) {
          auto p = provider(n);
          if (!p) {
            out_.diagnostics.push_back({Diagnostic::Severity::Warning, "unbound-import", f,
                                        lib + " imports " + n + " which no library exports"});
            continue;
          }
          const auto* target = libs_.at(p->first);
          if (target->wrapper_params.count(p->second)) {
            // Numbers passed from one library into another's wrapper are not
            // recorded in interfaces.
            out_.complete = false;
            out_.diagnostics.push_back({Diagnostic::Severity::Warning, "external-wrapper", f,
                                        lib + " calls wrapper " + n + " of " + p->first});
          }
          mark(p->first, p->second);
        }
      }
    }
    return any;
  }

  std::string function_label(const std::string& lib, Addr f) const {
    for (const auto& [n, a] : libs_.at(lib)->symbols) {
      if (a == f) return lib + ":" + n;
    }
    return lib + ":" + hex(f);
  }

  void collect() {
    out_.program_syscalls = ident_.syscalls;
    for (const auto& [addr, site] : ident_.sites) {
      for (auto n : site.numbers) out_.provenance[n].insert("site:" + hex(addr));
    }
    if (!ident_.complete) out_.complete = false;
    for (const auto& [name, set] : out_.import_syscalls) {
      out_.program_syscalls.insert(set.begin(), set.end());
    }
    for (const auto& [lib, funcs] : out_.reachable) {
      const auto* iface = libs_.at(lib);
      std::set<Addr> unresolved(iface->unresolved_sites.begin(), iface->unresolved_sites.end());
      std::set<Addr> poisoned(iface->poisoned.begin(), iface->poisoned.end());
      for (Addr f : funcs) {
        const auto& s = iface->func_graph.at(f).syscalls;
        out_.program_syscalls.insert(s.begin(), s.end());
        for (auto n : s) out_.provenance[n].insert(function_label(lib, f));
        if (unresolved.count(f) || poisoned.count(f)) {
          out_.complete = false;
          out_.diagnostics.push_back({Diagnostic::Severity::Warning,
                                      unresolved.count(f) ? "unresolved-site" : "poisoned-function", f,
                                      "in " + function_label(lib, f)});
        }
      }
      for (const auto& [name, a] : iface->symbols) {
        if (funcs.count(a)) out_.export_syscalls[lib][name] = closure(lib, a);
      }
    }
    for (const auto& m : opts_.dlopen_modules) {
      auto& set = out_.module_syscalls[m.library];
      for (Addr f : out_.reachable[m.library]) {
        const auto& s = m.func_graph.at(f).syscalls;
        set.insert(s.begin(), s.end());
      }
    }
    for (auto& [name, set] : out_.import_syscalls) {
      if (auto p = provider(name)) {
        auto c = closure(p->first, p->second);
        set.insert(c.begin(), c.end());
      }
    }
    if (cfg_.image->is_dynamic() && !cfg_.image->interpreter.empty()) {
      for (auto n : opts_.loader_baseline) {
        out_.program_syscalls.insert(n);
        out_.provenance[n].insert("loader");
      }
    }
  }

  // Syscalls reachable from one library function, following calls across
  // libraries.
  SyscallSet closure(const std::string& lib, Addr f) const {
    SyscallSet out;
    std::set<std::pair<std::string, Addr>> seen{{lib, f}};
    std::vector<std::pair<std::string, Addr>> work{{lib, f}};
    while (!work.empty()) {
      auto [l, g] = work.back();
      work.pop_back();
      const auto* iface = libs_.at(l);
      auto it = iface->func_graph.find(g);
      if (it == iface->func_graph.end()) continue;
      out.insert(it->second.syscalls.begin(), it->second.syscalls.end());
      for (Addr c : it->second.callees) {
        if (seen.insert({l, c}).second) work.push_back({l, c});
      }
      if (auto ext = iface->external_refs.find(g); ext != iface->external_refs.end()) {
        for (const auto& [from, names] : ext->second) {
          for (const auto& n : names) {
            if (auto p = provider(n); p && seen.insert(*p).second) work.push_back(*p);
          }
        }
      }
    }
    return out;
  }

  const Cfg& cfg_;
  const ProgramIdentification& ident_;
  const LinkOptions& opts_;
  std::map<std::string, const SharedInterface*> libs_;
  std::vector<std::string> search_;
  std::map<std::string, std::vector<Addr>> work_;
  LinkResult out_;
};

}  // namespace

LinkResult link_and_resolve(const Cfg& exe_cfg, const ProgramIdentification& exe_ident,
                            const std::map<std::string, SharedInterface>& ifaces,
                            const LinkOptions& opts) {
  return Linker(exe_cfg, exe_ident, ifaces, opts).run();
}

}  // namespace sysid
