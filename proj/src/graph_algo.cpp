#include "deepseq/graph_algo.hpp"

#include <algorithm>

namespace dseq {

std::vector<std::vector<NodeId>> strongly_connected_components(const CircuitGraph& g) {
  const std::size_t n = g.size();
  constexpr int kUnvisited = -1;
  std::vector<int> index(n, kUnvisited), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<NodeId> stack;
  std::vector<std::vector<NodeId>> out;
  int counter = 0;

  struct Frame {
    NodeId v;
    std::size_t next_edge;
  };
  std::vector<Frame> call;
  for (NodeId root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) continue;
    call.push_back({root, 0});
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      Frame& f = call.back();
      const auto succ = g.fanouts(f.v);
      if (f.next_edge < succ.size()) {
        NodeId w = succ[f.next_edge++];
        if (index[w] == kUnvisited) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
        continue;
      }
      const NodeId v = f.v;
      call.pop_back();
      if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
      if (low[v] == index[v]) {
        std::vector<NodeId> comp;
        NodeId w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp.push_back(w);
        } while (w != v);
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::vector<bool> on_cycle(const CircuitGraph& g) {
  std::vector<bool> out(g.size(), false);
  for (const auto& comp : strongly_connected_components(g)) {
    if (comp.size() >= 2) {
      for (NodeId v : comp) out[v] = true;
    } else {
      const NodeId v = comp[0];
      for (NodeId u : g.fanins(v)) {
        if (u == v) out[v] = true;
      }
    }
  }
  return out;
}

}  // namespace dseq
