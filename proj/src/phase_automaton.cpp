#include "sysid/phase_automaton.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include "sysid/error.hpp"

namespace sysid {

std::size_t SyscallNfa::add_state(std::optional<Addr> blk, std::uint64_t size) {
  delta.emplace_back();
  block.push_back(blk);
  bytes.push_back(size);
  return delta.size() - 1;
}

void SyscallNfa::add(std::size_t from, Label l, std::size_t to) {
  delta.at(from)[l].insert(to);
  if (l) alphabet.insert(*l);
}

SyscallNfa build_nfa(const Cfg& cfg, const ProgramIdentification& ident, const NfaOptions& opts) {
  SyscallNfa nfa;
  const auto reachable = cfg.reachable_from_entries();
  std::map<Addr, std::size_t> state;
  for (Addr b : reachable) state[b] = nfa.add_state(b, cfg.blocks.at(b).byte_len);

  std::vector<Addr> roots;
  for (Addr e : cfg.entry_nodes) {
    if (state.count(e)) roots.push_back(e);
  }
  if (roots.size() == 1) {
    nfa.initial = state.at(roots.front());
  } else {
    nfa.initial = nfa.add_state();
    for (Addr r : roots) nfa.add(nfa.initial, std::nullopt, state.at(r));
  }

  // A block may hold several syscall instructions; they fire in address
  // order (ident.sites is sorted).
  std::map<Addr, std::vector<const SyscallSite*>> sites_of_block;
  std::vector<Addr> unresolved;
  for (const auto& [addr, site] : ident.sites) {
    const LiftedBlock* b = cfg.block_containing(addr);
    if (!b || !state.count(b->start)) continue;
    sites_of_block[b->start].push_back(&site);
    if (!site.resolved()) unresolved.push_back(addr);
  }
  if (!unresolved.empty() && !opts.allow_unresolved) {
    std::string list;
    for (Addr a : unresolved) list += (list.empty() ? "" : ", ") + hex(a);
    throw Error(ErrorCode::UnresolvedSitesPresent, "unresolved syscall sites: " + list);
  }
  auto labels_of = [&](const SyscallSite* site) -> const SyscallSet& {
    return site->resolved() ? site->numbers : opts.fallback;
  };

  std::optional<std::size_t> sink;
  for (const auto& [b, s] : state) {
    std::vector<std::size_t> succ;
    for (const auto& e : cfg.out_edges(b)) {
      if (auto it = state.find(e.dst); it != state.end()) succ.push_back(it->second);
    }
    if (auto it = opts.external_calls.find(b); it != opts.external_calls.end()) {
      for (auto n : it->second) nfa.add(s, n, s);
    }
    std::vector<const SyscallSet*> chain;
    if (auto it = sites_of_block.find(b); it != sites_of_block.end()) {
      for (const auto* site : it->second) {
        if (!labels_of(site).empty()) chain.push_back(&labels_of(site));
      }
    }
    if (chain.empty()) {
      for (auto to : succ) nfa.add(s, std::nullopt, to);
      continue;
    }
    // Every site but the last leads to an intermediate state inside the block.
    std::size_t from = s;
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      auto mid = nfa.add_state();
      for (auto n : *chain[i]) nfa.add(from, n, mid);
      from = mid;
    }
    if (succ.empty()) {
      if (!sink) sink = nfa.add_state();
      succ.push_back(*sink);
    }
    for (auto to : succ) {
      for (auto n : *chain.back()) nfa.add(from, n, to);
    }
  }
  return nfa;
}

namespace {

std::vector<std::size_t> epsilon_closure(const SyscallNfa& nfa, std::set<std::size_t> seed) {
  std::vector<std::size_t> work(seed.begin(), seed.end());
  while (!work.empty()) {
    std::size_t s = work.back();
    work.pop_back();
    auto it = nfa.delta[s].find(std::nullopt);
    if (it == nfa.delta[s].end()) continue;
    for (auto t : it->second) {
      if (seed.insert(t).second) work.push_back(t);
    }
  }
  return {seed.begin(), seed.end()};
}

// Strongly connected components of a graph given as adjacency sets; returns
// the component index of every node.
std::vector<std::size_t> scc(const std::vector<std::set<std::size_t>>& adj) {
  const std::size_t n = adj.size();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, kUnset), low(n, 0), comp(n, kUnset);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::size_t counter = 0, comps = 0;
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnset) continue;
    // Iterative Tarjan: (node, iterator over successors).
    std::vector<std::pair<std::size_t, std::set<std::size_t>::const_iterator>> call;
    auto enter = [&](std::size_t v) {
      index[v] = low[v] = counter++;
      stack.push_back(v);
      on_stack[v] = true;
      call.emplace_back(v, adj[v].begin());
    };
    enter(root);
    while (!call.empty()) {
      auto& [v, it] = call.back();
      if (it != adj[v].end()) {
        std::size_t w = *it++;
        if (index[w] == kUnset) {
          enter(w);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = comps;
        } while (w != v);
        ++comps;
      }
      std::size_t done = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
    }
  }
  return comp;
}

// Renumbers groups so that cycles between groups collapse and phase ids
// follow the smallest member state (the initial state's phase is 0).
void normalize(PhaseDfa& dfa, std::vector<std::size_t>& group) {
  std::size_t groups = group.empty() ? 0 : *std::max_element(group.begin(), group.end()) + 1;
  std::vector<std::set<std::size_t>> adj(groups);
  for (std::size_t s = 0; s < dfa.delta.size(); ++s) {
    for (const auto& [n, t] : dfa.delta[s]) {
      if (group[s] != group[t]) adj[group[s]].insert(group[t]);
    }
  }
  auto comp = scc(adj);
  std::map<std::size_t, std::size_t> renumber;
  dfa.phase_of.assign(dfa.delta.size(), 0);
  for (std::size_t s = 0; s < dfa.delta.size(); ++s) {
    std::size_t c = comp[group[s]];
    auto [it, fresh] = renumber.emplace(c, renumber.size());
    dfa.phase_of[s] = it->second;
  }
  group = dfa.phase_of;
}

void compute_phase_sets(PhaseDfa& dfa, const SyscallNfa& nfa) {
  std::size_t count = dfa.phase_of.empty() ? 0 : *std::max_element(dfa.phase_of.begin(), dfa.phase_of.end()) + 1;
  dfa.phases.assign(count, {});
  dfa.allowed.assign(count, {});
  dfa.code_size.assign(count, 0);
  std::vector<std::set<Addr>> blocks(count);
  for (std::size_t s = 0; s < dfa.delta.size(); ++s) {
    std::size_t p = dfa.phase_of[s];
    dfa.phases[p].push_back(s);
    for (const auto& [n, t] : dfa.delta[s]) dfa.allowed[p].insert(n);
    for (auto q : dfa.states[s]) {
      if (q < nfa.block.size() && nfa.block[q] && blocks[p].insert(*nfa.block[q]).second) {
        dfa.code_size[p] += nfa.bytes[q];
      }
    }
  }
}

}  // namespace

PhaseDfa determinize(const SyscallNfa& nfa, std::size_t max_states) {
  PhaseDfa dfa;
  dfa.alphabet = nfa.alphabet;
  std::map<std::vector<std::size_t>, std::size_t> ids;
  auto intern = [&](std::vector<std::size_t> set) {
    auto [it, fresh] = ids.emplace(set, dfa.states.size());
    if (fresh) {
      if (dfa.states.size() >= max_states) {
        throw Error(ErrorCode::StateBlowup,
                    "more than " + std::to_string(max_states) + " subset states (last subset has " +
                        std::to_string(set.size()) + " NFA states)");
      }
      dfa.states.push_back(std::move(set));
      dfa.delta.emplace_back();
    }
    return it->second;
  };
  if (nfa.size() == 0) {
    intern({});
    return dfa;
  }
  dfa.initial = intern(epsilon_closure(nfa, {nfa.initial}));
  for (std::size_t i = 0; i < dfa.states.size(); ++i) {  // breadth-first numbering
    std::map<std::uint64_t, std::set<std::size_t>> moves;
    for (auto s : dfa.states[i]) {
      for (const auto& [l, targets] : nfa.delta[s]) {
        if (l) moves[*l].insert(targets.begin(), targets.end());
      }
    }
    for (auto& [n, targets] : moves) {
      std::size_t t = intern(epsilon_closure(nfa, std::move(targets)));
      dfa.delta[i][n] = t;
    }
  }
  return dfa;
}

double jaccard(const SyscallSet& a, const SyscallSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (auto x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

PhaseDfa merge_phases(PhaseDfa dfa, const SyscallNfa& nfa, double tau) {
  std::vector<std::size_t> group(dfa.delta.size());
  std::iota(group.begin(), group.end(), 0);
  normalize(dfa, group);
  compute_phase_sets(dfa, nfa);
  if (tau >= 1.0) return dfa;
  for (bool merged = true; merged;) {
    merged = false;
    for (const auto& [p, q] : dfa.phase_edges()) {
      if (jaccard(dfa.allowed[p], dfa.allowed[q]) < tau) continue;
      for (auto& g : group) {
        if (g == q) g = p;
      }
      normalize(dfa, group);
      compute_phase_sets(dfa, nfa);
      merged = true;
      break;
    }
  }
  return dfa;
}

std::set<std::pair<std::size_t, std::size_t>> PhaseDfa::phase_edges() const {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < delta.size(); ++s) {
    for (const auto& [n, t] : delta[s]) {
      if (phase_of[s] != phase_of[t]) out.insert({phase_of[s], phase_of[t]});
    }
  }
  return out;
}

std::map<std::pair<std::size_t, std::size_t>, std::size_t> PhaseDfa::transition_matrix() const {
  std::map<std::pair<std::size_t, std::size_t>, SyscallSet> labels;
  for (std::size_t s = 0; s < delta.size(); ++s) {
    for (const auto& [n, t] : delta[s]) {
      if (phase_of[s] != phase_of[t]) labels[{phase_of[s], phase_of[t]}].insert(n);
    }
  }
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> out;
  for (const auto& [k, v] : labels) out[k] = v.size();
  return out;
}

PhaseDfa back_propagate(PhaseDfa dfa) {
  const auto edges = dfa.phase_edges();
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& [p, q] : edges) {
      auto before = dfa.allowed[p].size();
      dfa.allowed[p].insert(dfa.allowed[q].begin(), dfa.allowed[q].end());
      changed |= dfa.allowed[p].size() != before;
    }
  }
  return dfa;
}

bool nfa_accepts(const SyscallNfa& nfa, const std::vector<std::uint64_t>& word) {
  if (nfa.size() == 0) return word.empty();
  auto current = epsilon_closure(nfa, {nfa.initial});
  for (auto n : word) {
    std::set<std::size_t> next;
    for (auto s : current) {
      if (auto it = nfa.delta[s].find(n); it != nfa.delta[s].end()) next.insert(it->second.begin(), it->second.end());
    }
    if (next.empty()) return false;
    current = epsilon_closure(nfa, std::move(next));
  }
  return true;
}

bool dfa_accepts(const PhaseDfa& dfa, const std::vector<std::uint64_t>& word) {
  std::size_t s = dfa.initial;
  for (auto n : word) {
    auto it = dfa.delta[s].find(n);
    if (it == dfa.delta[s].end()) return false;
    s = it->second;
  }
  return true;
}

bool phase_policy_admits(const PhaseDfa& dfa, const std::vector<std::uint64_t>& word) {
  std::size_t s = dfa.initial;
  for (auto n : word) {
    if (!dfa.allowed[dfa.phase_of[s]].count(n)) return false;
    auto it = dfa.delta[s].find(n);
    if (it == dfa.delta[s].end()) return false;
    s = it->second;
  }
  return true;
}

}  // namespace sysid
