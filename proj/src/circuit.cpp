#include "deepseq/circuit.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

namespace dseq {

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::PI: return "PI";
    case NodeKind::AND: return "AND";
    case NodeKind::NOT: return "NOT";
    case NodeKind::FF: return "FF";
  }
  return "?";
}

int expected_arity(NodeKind kind) {
  switch (kind) {
    case NodeKind::PI: return 0;
    case NodeKind::AND: return 2;
    case NodeKind::NOT: return 1;
    case NodeKind::FF: return 1;
  }
  return -1;
}

// ---------------------------------------------------------------------------
// CircuitGraph
// ---------------------------------------------------------------------------

CircuitGraph CircuitGraph::from_parts(std::vector<NodeKind> kinds,
                                      std::vector<std::vector<NodeId>> fanins,
                                      std::vector<NodeId> pos,
                                      std::vector<std::string> names,
                                      std::optional<NodeId> const_false,
                                      const std::vector<NodeId>& reset_one) {
  CircuitGraph g;
  g.kinds_ = std::move(kinds);
  g.fanins_ = std::move(fanins);
  g.fanins_.resize(g.kinds_.size());
  g.pos_ = std::move(pos);
  g.names_ = std::move(names);
  g.const_false_ = const_false;
  g.finalize();
  for (NodeId ff : reset_one) {
    if (ff < g.size() && g.kinds_[ff] == NodeKind::FF) g.ff_init_[g.v_ff(ff)] = 1;
  }
  return g;
}

void CircuitGraph::finalize() {
  const std::size_t n = kinds_.size();
  names_.resize(n);
  fanouts_.assign(n, {});
  pi_index_.assign(n, -1);
  ff_index_.assign(n, -1);
  pis_.clear();
  ffs_.clear();
  for (NodeId v = 0; v < n; ++v) {
    for (NodeId u : fanins_[v]) {
      if (u < n) fanouts_[u].push_back(v);
    }
    if (kinds_[v] == NodeKind::PI) {
      pi_index_[v] = static_cast<int>(pis_.size());
      pis_.push_back(v);
    } else if (kinds_[v] == NodeKind::FF) {
      ff_index_[v] = static_cast<int>(ffs_.size());
      ffs_.push_back(v);
    }
  }
  ff_init_.resize(ffs_.size(), 0);
  by_name_.clear();
  for (NodeId v = 0; v < n; ++v) {
    if (!names_[v].empty()) by_name_.emplace(names_[v], v);
  }
}

std::optional<NodeId> CircuitGraph::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t CircuitGraph::count(NodeKind kind) const {
  return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), kind));
}

// ---------------------------------------------------------------------------
// CircuitBuilder
// ---------------------------------------------------------------------------

NodeId CircuitBuilder::push(NodeKind kind, std::vector<NodeId> fanins, std::string name) {
  for (NodeId u : fanins) {
    if (u != kNoNode && u >= kinds_.size()) {
      throw std::out_of_range("fanin id " + std::to_string(u) + " does not exist");
    }
  }
  const auto id = static_cast<NodeId>(kinds_.size());
  kinds_.push_back(kind);
  fanins_.push_back(std::move(fanins));
  names_.push_back(std::move(name));
  return id;
}

NodeId CircuitBuilder::add_pi(std::string name) { return push(NodeKind::PI, {}, std::move(name)); }

NodeId CircuitBuilder::add_const_false() {
  if (!const_false_) const_false_ = push(NodeKind::PI, {}, "");
  return *const_false_;
}

NodeId CircuitBuilder::add_and(NodeId a, NodeId b, std::string name) {
  return push(NodeKind::AND, {a, b}, std::move(name));
}

NodeId CircuitBuilder::add_not(NodeId a, std::string name) {
  return push(NodeKind::NOT, {a}, std::move(name));
}

NodeId CircuitBuilder::add_ff(std::string name, bool init) {
  NodeId id = push(NodeKind::FF, {}, std::move(name));
  if (init) ff_inits_.emplace_back(id, true);
  return id;
}

void CircuitBuilder::set_ff_input(NodeId ff, NodeId d) {
  if (ff >= kinds_.size() || kinds_[ff] != NodeKind::FF) {
    throw std::invalid_argument("node " + std::to_string(ff) + " is not an FF");
  }
  if (d >= kinds_.size()) throw std::out_of_range("FF input id out of range");
  fanins_[ff] = {d};
}

void CircuitBuilder::set_ff_init(NodeId ff, bool init) { ff_inits_.emplace_back(ff, init); }

void CircuitBuilder::add_po(NodeId v) {
  if (v >= kinds_.size()) throw std::out_of_range("output id out of range");
  pos_.push_back(v);
}

void CircuitBuilder::set_name(NodeId v, std::string name) { names_.at(v) = std::move(name); }

CircuitGraph CircuitBuilder::build() && {
  CircuitGraph g;
  g.kinds_ = std::move(kinds_);
  g.fanins_ = std::move(fanins_);
  g.pos_ = std::move(pos_);
  g.names_ = std::move(names_);
  g.const_false_ = const_false_;
  g.finalize();
  for (auto [ff, init] : ff_inits_) {
    g.ff_init_[g.v_ff(ff)] = init ? 1 : 0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

std::vector<Violation> validate(const CircuitGraph& g) {
  std::vector<Violation> out;
  const std::size_t n = g.size();
  bool ids_ok = true;
  for (NodeId v = 0; v < n; ++v) {
    const auto fi = g.fanins(v);
    const int want = expected_arity(g.kind(v));
    if (static_cast<int>(fi.size()) != want) {
      std::ostringstream os;
      os << "arity: " << to_string(g.kind(v)) << " has " << fi.size() << " fanins, expected "
         << want;
      out.push_back({v, os.str()});
    }
    for (NodeId u : fi) {
      if (u >= n) {
        out.push_back({v, "fanin id " + std::to_string(u) + " out of range"});
        ids_ok = false;
      }
    }
  }
  for (NodeId po : g.pos()) {
    if (po >= n) out.push_back({po, "output id out of range"});
  }
  if (!ids_ok) return out;

  // Kahn's algorithm over the FF-cut graph: edges leaving an FF are dropped.
  std::vector<int> pending(n, 0);
  for (NodeId v = 0; v < n; ++v) {
    for (NodeId u : g.fanins(v)) {
      if (g.kind(u) != NodeKind::FF) ++pending[v];
    }
  }
  std::queue<NodeId> ready;
  for (NodeId v = 0; v < n; ++v) {
    if (pending[v] == 0) ready.push(v);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    NodeId u = ready.front();
    ready.pop();
    ++seen;
    if (g.kind(u) == NodeKind::FF) continue;
    for (NodeId v : g.fanouts(u)) {
      if (--pending[v] == 0) ready.push(v);
    }
  }
  if (seen != n) {
    // Nodes left over are on a loop or downstream of one; peel off the
    // downstream ones so only loop members are reported.
    std::vector<bool> stuck(n);
    std::vector<int> succ(n, 0);
    for (NodeId v = 0; v < n; ++v) stuck[v] = pending[v] > 0;
    for (NodeId v = 0; v < n; ++v) {
      if (!stuck[v] || g.kind(v) == NodeKind::FF) continue;
      for (NodeId w : g.fanouts(v)) succ[v] += stuck[w] ? 1 : 0;
    }
    std::queue<NodeId> sinks;
    for (NodeId v = 0; v < n; ++v) {
      if (stuck[v] && (succ[v] == 0 || g.kind(v) == NodeKind::FF)) sinks.push(v);
    }
    while (!sinks.empty()) {
      NodeId v = sinks.front();
      sinks.pop();
      stuck[v] = false;
      for (NodeId u : g.fanins(v)) {
        if (stuck[u] && g.kind(u) != NodeKind::FF && --succ[u] == 0) sinks.push(u);
      }
    }
    for (NodeId v = 0; v < n; ++v) {
      if (stuck[v]) out.push_back({v, "acyclicity: combinational loop without an FF"});
    }
  }
  return out;
}

void require_valid(const CircuitGraph& g) {
  auto violations = validate(g);
  if (violations.empty()) return;
  std::ostringstream os;
  os << "invalid circuit (" << violations.size() << " violations)";
  for (std::size_t i = 0; i < violations.size() && i < 5; ++i) {
    os << "; node " << violations[i].node << ": " << violations[i].rule;
  }
  throw std::invalid_argument(os.str());
}

}  // namespace dseq
