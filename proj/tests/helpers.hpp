#pragma once

// Shared fixtures and independent reference evaluators for the tests.

#include <algorithm>
#include <functional>
#include <map>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepseq/circuit.hpp"
#include "deepseq/generate.hpp"

namespace testutil {

using dseq::CircuitGraph;
using dseq::NodeId;
using dseq::NodeKind;

inline const char* kS27 = R"(# s27
INPUT(G0)
INPUT(G1)
INPUT(G2)
INPUT(G3)
OUTPUT(G17)
G5 = DFF(G10)
G6 = DFF(G11)
G7 = DFF(G13)
G14 = NOT(G0)
G17 = NOT(G11)
G8 = AND(G14, G6)
G15 = OR(G12, G8)
G16 = OR(G3, G8)
G9 = NAND(G16, G15)
G10 = NOR(G14, G11)
G11 = NOR(G5, G9)
G12 = NOR(G1, G7)
G13 = NOR(G2, G12)
)";

/// One FF whose D input is its own negation.
inline CircuitGraph toggle_ff() {
  dseq::CircuitBuilder b;
  b.add_pi("en");
  const NodeId ff = b.add_ff("q");
  const NodeId n = b.add_not(ff);
  b.set_ff_input(ff, n);
  b.add_po(n);
  return std::move(b).build();
}

/// PI -> NOT -> NOT -> ... chain of `length` NOTs ending in a PO.
inline CircuitGraph not_chain(int length) {
  dseq::CircuitBuilder b;
  NodeId prev = b.add_pi("a");
  for (int i = 0; i < length; ++i) prev = b.add_not(prev);
  b.add_po(prev);
  return std::move(b).build();
}

/// Two-stage pipeline without feedback.
inline CircuitGraph pipeline() {
  dseq::CircuitBuilder b;
  const NodeId a = b.add_pi("a"), c = b.add_pi("c");
  const NodeId g1 = b.add_and(a, c);
  const NodeId f1 = b.add_ff("f1");
  b.set_ff_input(f1, g1);
  const NodeId n1 = b.add_not(f1);
  const NodeId g2 = b.add_and(n1, a);
  const NodeId f2 = b.add_ff("f2");
  b.set_ff_input(f2, g2);
  b.add_po(f2);
  return std::move(b).build();
}

/// Ten nodes: one FF on a feedback loop through AND/NOT, one feed-forward FF.
inline CircuitGraph ten_nodes() {
  dseq::CircuitBuilder b;
  const NodeId a = b.add_pi("a"), c = b.add_pi("c");
  const NodeId q = b.add_ff("q");
  const NodeId x = b.add_and(a, q);
  const NodeId nx = b.add_not(x);
  const NodeId y = b.add_and(nx, c);
  b.set_ff_input(q, y);
  const NodeId na = b.add_not(a);
  const NodeId z = b.add_and(na, c);
  const NodeId p = b.add_ff("p");
  b.set_ff_input(p, z);
  b.add_po(b.add_not(p));
  return std::move(b).build();
}

inline CircuitGraph random_circuit(std::uint64_t seed, std::size_t n_pi, std::size_t n_and,
                                   std::size_t n_not, std::size_t n_ff, double feedback = 0.5) {
  dseq::GenSpec s;
  s.n_pi = n_pi;
  s.n_and = n_and;
  s.n_not = n_not;
  s.n_ff = n_ff;
  s.seed = seed;
  s.feedback_prob = feedback;
  return dseq::generate(s).graph;
}

/// Node values for one combinational evaluation, evaluated by recursion on
/// fanins (independent of the library's ordering code). `source` gives the
/// value of every PI and FF output.
inline std::vector<int> eval_recursive(const CircuitGraph& g, const std::vector<int>& source) {
  std::vector<int> val(g.size(), -1);
  std::function<int(NodeId)> get = [&](NodeId v) -> int {
    if (val[v] >= 0) return val[v];
    int r;
    switch (g.kind(v)) {
      case NodeKind::PI:
      case NodeKind::FF: r = source[v]; break;
      case NodeKind::NOT: r = !get(g.fanins(v)[0]); break;
      default: r = get(g.fanins(v)[0]) & get(g.fanins(v)[1]); break;
    }
    return val[v] = r;
  };
  for (NodeId v = 0; v < g.size(); ++v) get(v);
  return val;
}

/// Minimal BENCH interpreter over original net names: evaluates every net
/// given values for inputs and DFF outputs.
class BenchOracle {
 public:
  explicit BenchOracle(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      line.erase(std::remove_if(line.begin(), line.end(), ::isspace), line.end());
      if (line.empty() || line[0] == '#') continue;
      if (line.rfind("INPUT(", 0) == 0) {
        inputs.push_back(line.substr(6, line.size() - 7));
        continue;
      }
      if (line.rfind("OUTPUT(", 0) == 0) continue;
      const auto eq = line.find('=');
      const auto open = line.find('(');
      Gate gate;
      gate.op = line.substr(eq + 1, open - eq - 1);
      std::string args = line.substr(open + 1, line.size() - open - 2);
      std::stringstream ss(args);
      std::string a;
      while (std::getline(ss, a, ',')) gate.args.push_back(a);
      const std::string out = line.substr(0, eq);
      if (gate.op == "DFF") {
        dffs.push_back(out);
      } else {
        gates[out] = gate;
      }
    }
  }

  int eval(const std::string& net, const std::map<std::string, int>& src) const {
    if (auto it = src.find(net); it != src.end()) return it->second;
    const Gate& g = gates.at(net);
    std::vector<int> x;
    for (const auto& a : g.args) x.push_back(eval(a, src));
    int all = 1, any = 0;
    for (int b : x) {
      all &= b;
      any |= b;
    }
    if (g.op == "AND") return all;
    if (g.op == "NAND") return !all;
    if (g.op == "OR") return any;
    if (g.op == "NOR") return !any;
    if (g.op == "NOT") return !x[0];
    throw std::runtime_error("oracle: unknown gate " + g.op);
  }

  struct Gate {
    std::string op;
    std::vector<std::string> args;
  };
  std::vector<std::string> inputs, dffs;
  std::map<std::string, Gate> gates;
};

}  // namespace testutil
