#include "sysid/cli.hpp"

#include <algorithm>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sysid/error.hpp"
#include "sysid/phase_automaton.hpp"
#include "sysid/pipeline.hpp"
#include "sysid/report.hpp"

namespace sysid {
namespace {

// --config documents: a JSON object keyed by long option names; nested
// objects address a subcommand's options, e.g. {"phases": {"tau": 0.5}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config: expected a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static void flatten(const nlohmann::json& j, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        // Opening a section selects the subcommand.
        items.push_back({parents, key, {}});
        flatten(value, p, items);
        items.push_back({p, "--", {}});
        continue;
      }
      CLI::ConfigItem item{parents, key, {}};
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const nlohmann::json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }
};

struct RunConfig {
  std::string input;
  std::string output;
  std::string iface_dir;
  bool write_interfaces = false;
  std::vector<std::string> lib_dirs;
  std::vector<std::string> dlopen_libs;
  std::size_t max_states = ExecBudget{}.max_states;
  std::size_t max_steps = ExecBudget{}.max_steps_per_state;
  std::size_t max_loop_visits = ExecBudget{}.max_loop_visits;
  double timeout = ExecBudget{}.wall_clock_limit;
  std::size_t max_call_depth = IdentifyOptions{}.max_call_depth;
  std::size_t value_set_size = ExecOptions{}.max_value_set_size;
  bool no_wrapper_heuristic = false;
  bool strict_memory = false;
  bool no_loader_baseline = false;
  bool json_diagnostics = false;
  unsigned jobs = 1;
  std::string kernel;

  // analyze
  std::string profile_format = "plain";
  std::string default_action = "errno";
  std::string unresolved_policy = "fail";
  std::vector<std::string> allow;
  // phases
  double tau = kDefaultJaccardThreshold;
  bool no_backprop = false;
  std::string phase_format = "text";
  std::size_t max_dfa_states = kDefaultMaxDfaStates;
  bool allow_unresolved = false;
  // compare
  std::vector<std::string> traces;
  std::string compare_format = "text";
};

class Runner {
 public:
  Runner(const RunConfig& cfg, std::ostream& out, std::ostream& err)
      : cfg_(cfg), out_(out), err_(err),
        table_(cfg.kernel.empty() ? SyscallTable::latest() : SyscallTable::for_kernel(cfg.kernel)) {}

  int analyze() {
    auto a = run_analysis();
    SyscallSet extra;
    for (const auto& name : cfg_.allow) extra.insert(number_of(name));
    auto policy = *parse_unresolved_policy(cfg_.unresolved_policy);
    if (cfg_.profile_format == "report") {
      emit(analysis_report(a, table_));
      return a.complete || policy != UnresolvedPolicy::Fail ? kExitOk : kExitFailure;
    }
    auto profile = make_profile(a.syscalls, a.complete, a.provenance, policy, extra, table_);
    profile.default_action = *parse_default_action(cfg_.default_action);
    emit(emit_profile(profile, cfg_.profile_format == "oci" ? ProfileFormat::OciSeccompJson : ProfileFormat::PlainList,
                      table_));
    return kExitOk;
  }

  int interface() {
    auto iface = analyze_library(cfg_.input, identify_options(), paths(cfg_.lib_dirs));
    emit(to_json(iface));
    return kExitOk;
  }

  int phases() {
    auto a = run_analysis();
    NfaOptions nopts;
    if (cfg_.allow_unresolved) {
      nopts.allow_unresolved = true;
      nopts.fallback = table_.all();
    }
    if (a.link) {
      auto add = [&](const std::map<Addr, std::string>& blocks) {
        for (const auto& [blk, sym] : blocks) {
          auto it = a.link->import_syscalls.find(sym);
          if (it != a.link->import_syscalls.end()) nopts.external_calls[blk] = it->second;
        }
      };
      add(a.cfg.plt_blocks);
      add(a.cfg.got_call_blocks);
    }
    auto nfa = build_nfa(a.cfg, a.ident, nopts);
    auto dfa = merge_phases(determinize(nfa, cfg_.max_dfa_states), nfa, cfg_.tau);
    if (!cfg_.no_backprop) dfa = back_propagate(std::move(dfa));
    emit(phase_report(dfa, cfg_.phase_format == "json", !cfg_.no_backprop, table_));
    return kExitOk;
  }

  int compare() {
    auto a = run_analysis();
    SyscallSet truth;
    std::vector<std::string> unknown;
    for (const auto& t : cfg_.traces) {
      auto g = parse_trace(t, table_);
      truth.insert(g.observed.begin(), g.observed.end());
      for (const auto& n : g.unknown_names) {
        report({Diagnostic::Severity::Warning, "unknown-syscall-name", std::nullopt, t + ": " + n});
      }
    }
    auto s = score(a.syscalls, truth);
    if (cfg_.compare_format == "json") {
      nlohmann::ordered_json j;
      auto ratio = [](const Ratio& r) { return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator()); };
      j["precision"] = ratio(s.precision);
      j["recall"] = ratio(s.recall);
      j["f1"] = ratio(s.f1);
      j["complete"] = a.complete;
      j["false_negatives"] = names(s.false_negatives);
      j["false_positives"] = names(s.false_positives);
      emit(j.dump(2) + "\n");
    } else {
      std::ostringstream o;
      auto line = [&](const char* label, const Ratio& r) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", Score::value(r));
        o << label << buf << " (" << r.numerator() << "/" << r.denominator() << ")\n";
      };
      line("precision ", s.precision);
      line("recall    ", s.recall);
      line("f1        ", s.f1);
      o << "false negatives " << s.false_negatives.size() << ": " << names(s.false_negatives).dump() << "\n";
      o << "false positives " << s.false_positives.size() << ": " << names(s.false_positives).dump() << "\n";
      if (!a.complete) o << "analysis incomplete: unresolved sites present\n";
      emit(o.str());
    }
    return s.false_negatives.empty() ? kExitOk : kExitFailure;
  }

  int dump_cfg() {
    auto img = std::make_shared<const BinaryImage>(load_binary(cfg_.input));
    auto cfg = build_cfg(img);
    for (const auto& d : cfg.diagnostics) report(d);
    emit(dump_edges(cfg));
    return kExitOk;
  }

  void report(const Diagnostic& d) {
    if (cfg_.json_diagnostics) {
      err_ << diagnostic_json(d) << "\n";
    } else {
      err_ << to_string(d.severity) << "[" << d.code << "]";
      if (d.address) err_ << " " << hex(*d.address);
      err_ << ": " << d.message << "\n";
    }
  }

 private:
  IdentifyOptions identify_options() const {
    IdentifyOptions o;
    o.budget.max_states = cfg_.max_states;
    o.budget.max_steps_per_state = cfg_.max_steps;
    o.budget.max_loop_visits = cfg_.max_loop_visits;
    o.budget.wall_clock_limit = cfg_.timeout;
    o.exec.max_value_set_size = cfg_.value_set_size;
    o.exec.strict_memory = cfg_.strict_memory;
    o.max_call_depth = cfg_.max_call_depth;
    o.max_syscall_number = table_.max_number();
    o.wrapper_heuristic = !cfg_.no_wrapper_heuristic;
    o.jobs = std::max(1u, cfg_.jobs);
    return o;
  }

  ProgramAnalysis run_analysis() {
    AnalyzeOptions o;
    o.identify = identify_options();
    if (!cfg_.iface_dir.empty()) o.iface_dir = cfg_.iface_dir;
    o.write_interfaces = cfg_.write_interfaces;
    o.lib_dirs = paths(cfg_.lib_dirs);
    o.dlopen_libs = paths(cfg_.dlopen_libs);
    o.loader_baseline = !cfg_.no_loader_baseline;
    auto a = analyze_program(cfg_.input, o);
    for (const auto& d : a.cfg.diagnostics) report(d);
    for (const auto& d : a.diagnostics) report(d);
    return a;
  }

  static std::vector<std::filesystem::path> paths(const std::vector<std::string>& v) {
    return {v.begin(), v.end()};
  }

  SyscallNumber number_of(const std::string& name) const {
    if (auto n = table_.number(name)) return *n;
    throw Error(ErrorCode::InvalidArgument, "unknown syscall name " + name);
  }

  nlohmann::json names(const SyscallSet& s) const {
    auto j = nlohmann::json::array();
    for (auto n : s) j.push_back(table_.display_name(n));
    return j;
  }

  void emit(const std::string& text) {
    if (cfg_.output.empty()) {
      out_ << text;
      return;
    }
    std::ofstream f(cfg_.output, std::ios::binary);
    f << text;
    if (!f) throw Error(ErrorCode::Io, "cannot write " + cfg_.output);
  }

  const RunConfig& cfg_;
  std::ostream& out_;
  std::ostream& err_;
  const SyscallTable& table_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Static syscall identification for x86-64 ELF binaries", "sysid"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "Read options from a JSON file (keys are long option names)");
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("-o,--output", cfg.output, "Write the result to this file instead of stdout");
  app.add_option("--iface-dir", cfg.iface_dir, "Directory of cached <lib>.iface.json interfaces");
  app.add_flag("--write-interfaces", cfg.write_interfaces, "Store freshly computed interfaces in --iface-dir");
  app.add_option("-L,--lib-dir", cfg.lib_dirs, "Extra shared library search directory");
  app.add_option("--dlopen-lib", cfg.dlopen_libs, "Module the program loads at run time")->check(CLI::ExistingFile);
  app.add_option("--max-states", cfg.max_states, "Live symbolic states per query");
  app.add_option("--max-steps", cfg.max_steps, "Steps per symbolic state");
  app.add_option("--max-loop-visits", cfg.max_loop_visits, "Visits of one block per path");
  app.add_option("--timeout", cfg.timeout, "Wall-clock seconds per query");
  app.add_option("--max-call-depth", cfg.max_call_depth, "Function boundaries a backward search may cross");
  app.add_option("--value-set-size", cfg.value_set_size, "Constants tracked per value before widening");
  app.add_flag("--no-wrapper-heuristic", cfg.no_wrapper_heuristic, "Analyze wrapper sites like any other site");
  app.add_flag("--strict-memory", cfg.strict_memory, "Unknown writes and calls forget tracked stack slots");
  app.add_flag("--no-loader-baseline", cfg.no_loader_baseline, "Omit the dynamic loader's syscalls");
  app.add_flag("--json", cfg.json_diagnostics, "Diagnostics as JSON lines on stderr");
  app.add_option("-j,--jobs", cfg.jobs, "Worker threads for site identification")->check(CLI::PositiveNumber);
  app.add_option("--kernel", cfg.kernel, "Syscall table tag")
      ->check(CLI::IsMember(SyscallTable::available_tags()));

  auto* analyze = app.add_subcommand("analyze", "Print the syscall filter profile of a program");
  analyze->add_option("binary", cfg.input)->required()->check(CLI::ExistingFile);
  analyze->add_option("--format", cfg.profile_format, "plain, oci or report")
      ->check(CLI::IsMember({"plain", "oci", "report"}));
  analyze->add_option("--default-action", cfg.default_action, "errno, kill or log")
      ->check(CLI::IsMember({"errno", "kill", "log"}));
  analyze->add_option("--unresolved-policy", cfg.unresolved_policy, "fail, allow-all or allow-listed")
      ->check(CLI::IsMember({"fail", "allow-all", "allow-listed"}));
  analyze->add_option("--allow", cfg.allow, "Syscall names added under allow-listed");

  auto* iface = app.add_subcommand("interface", "Compute the shared interface of a library");
  iface->add_option("library", cfg.input)->required()->check(CLI::ExistingFile);

  auto* phases = app.add_subcommand("phases", "Derive execution phases and their allowlists");
  phases->add_option("binary", cfg.input)->required()->check(CLI::ExistingFile);
  phases->add_option("--tau", cfg.tau, "Jaccard threshold for merging adjacent phases (1 disables)")
      ->check(CLI::Range(0.0, 1.0));
  phases->add_flag("--no-backprop", cfg.no_backprop, "Keep per-phase allowlists as computed");
  phases->add_option("--format", cfg.phase_format, "text or json")->check(CLI::IsMember({"text", "json"}));
  phases->add_option("--max-dfa-states", cfg.max_dfa_states, "Subset construction cap");
  phases->add_flag("--allow-unresolved", cfg.allow_unresolved, "Label unresolved sites with every syscall");

  auto* compare = app.add_subcommand("compare", "Score the analysis against runtime traces");
  compare->add_option("binary", cfg.input)->required()->check(CLI::ExistingFile);
  compare->add_option("--trace", cfg.traces, "Trace file (repeatable)")->required()->check(CLI::ExistingFile);
  compare->add_option("--format", cfg.compare_format, "text or json")->check(CLI::IsMember({"text", "json"}));

  auto* dump = app.add_subcommand("dump-cfg", "Print the control-flow graph as an edge list");
  dump->add_option("binary", cfg.input)->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Runner runner(cfg, out, err);
  try {
    if (*analyze) return runner.analyze();
    if (*iface) return runner.interface();
    if (*phases) return runner.phases();
    if (*compare) return runner.compare();
    return runner.dump_cfg();
  } catch (const Error& e) {
    runner.report({Diagnostic::Severity::Error, std::string(to_string(e.code())), std::nullopt, e.what()});
    return e.code() == ErrorCode::InvalidArgument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    runner.report({Diagnostic::Severity::Error, "internal", std::nullopt, e.what()});
    return kExitFailure;
  }
}

}  // namespace sysid
