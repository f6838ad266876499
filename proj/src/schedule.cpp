#include "deepseq/schedule.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "deepseq/graph_algo.hpp"

namespace dseq {
namespace {

std::vector<int> cut_levels(const CircuitGraph& g) {
  const std::size_t n = g.size();
  std::vector<int> level(n, 0);
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
    const NodeId v = ready.front();
    ready.pop();
    ++seen;
    if (g.kind(v) != NodeKind::PI) {
      int deepest = 0;
      for (NodeId u : g.fanins(v)) {
        deepest = std::max(deepest, g.kind(u) == NodeKind::FF ? 0 : level[u]);
      }
      level[v] = deepest + 1;
    }
    if (g.kind(v) == NodeKind::FF) continue;
    for (NodeId w : g.fanouts(v)) {
      if (--pending[w] == 0) ready.push(w);
    }
  }
  if (seen != n) throw std::invalid_argument("levelize: combinational loop");
  return level;
}

}  // namespace

std::vector<CyclicRegion> detect_cycles(const CircuitGraph& g, const std::vector<int>& level_of) {
  std::vector<CyclicRegion> regions;
  for (auto& comp : strongly_connected_components(g)) {
    if (comp.size() < 2) continue;
    CyclicRegion r;
    for (NodeId v : comp) {
      if (g.kind(v) == NodeKind::FF) r.triggers.push_back(v);
    }
    if (r.triggers.empty()) continue;
    r.nodes = std::move(comp);
    r.order = r.nodes;
    std::stable_sort(r.order.begin(), r.order.end(), [&](NodeId a, NodeId b) {
      return level_of[a] != level_of[b] ? level_of[a] < level_of[b] : a < b;
    });
    r.min_level = level_of[r.order.front()];
    regions.push_back(std::move(r));
  }
  std::stable_sort(regions.begin(), regions.end(), [](const auto& a, const auto& b) {
    return a.min_level != b.min_level ? a.min_level < b.min_level : a.nodes[0] < b.nodes[0];
  });
  return regions;
}

std::vector<CyclicRegion> detect_cycles(const CircuitGraph& g) {
  return detect_cycles(g, cut_levels(g));
}

PropagationPlan levelize(const CircuitGraph& g) {
  PropagationPlan plan;
  plan.level_of = cut_levels(g);
  int top = 0;
  for (int l : plan.level_of) top = std::max(top, l);
  plan.levels.assign(g.size() == 0 ? 0 : static_cast<std::size_t>(top) + 1, {});
  for (NodeId v = 0; v < g.size(); ++v) plan.levels[plan.level_of[v]].push_back(v);
  for (const auto& level : plan.levels) {
    for (NodeId v : level) {
      if (g.kind(v) == NodeKind::FF) plan.ff_update_points.push_back(v);
    }
  }
  plan.cyclic_regions = detect_cycles(g, plan.level_of);
  return plan;
}

std::string PropagationPlan::to_json() const {
  nlohmann::ordered_json j;
  j["levels"] = levels;
  j["ff_update_points"] = ff_update_points;
  auto regions = nlohmann::ordered_json::array();
  for (const auto& r : cyclic_regions) {
    regions.push_back({{"triggers", r.triggers},
                       {"nodes", r.nodes},
                       {"order", r.order},
                       {"min_level", r.min_level}});
  }
  j["cyclic_regions"] = std::move(regions);
  return j.dump(2);
}

}  // namespace dseq
