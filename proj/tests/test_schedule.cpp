#include <doctest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "deepseq/graph_algo.hpp"
#include "deepseq/netlist_io.hpp"
#include "deepseq/schedule.hpp"
#include "helpers.hpp"

using namespace dseq;

namespace {

// Longest path in the FF-cut graph by memoized DFS; FF outputs are sources.
std::vector<int> dfs_levels(const CircuitGraph& g) {
  std::vector<int> memo(g.size(), -1);
  std::function<int(NodeId)> depth = [&](NodeId v) -> int {
    if (memo[v] >= 0) return memo[v];
    int d = 0;
    if (g.kind(v) != NodeKind::PI) {
      for (NodeId u : g.fanins(v)) d = std::max(d, g.kind(u) == NodeKind::FF ? 1 : depth(u) + 1);
    }
    return memo[v] = d;
  };
  for (NodeId v = 0; v < g.size(); ++v) depth(v);
  return memo;
}

// reach[u][v]: v reachable from u along fanout edges (including FF edges).
std::vector<std::vector<bool>> reachability(const CircuitGraph& g) {
  std::vector<std::vector<bool>> reach(g.size(), std::vector<bool>(g.size(), false));
  for (NodeId s = 0; s < g.size(); ++s) {
    std::vector<NodeId> stack{s};
    while (!stack.empty()) {
      const NodeId v = stack.back();
      stack.pop_back();
      for (NodeId w : g.fanouts(v)) {
        if (!reach[s][w]) {
          reach[s][w] = true;
          stack.push_back(w);
        }
      }
    }
  }
  return reach;
}

void check_plan(const CircuitGraph& g) {
  const auto plan = levelize(g);
  const auto oracle = dfs_levels(g);
  CHECK(plan.level_of == oracle);

  // Every node in exactly one level, sorted by id, levels[0] = PIs.
  std::vector<int> seen(g.size(), 0);
  for (std::size_t l = 0; l < plan.levels.size(); ++l) {
    CHECK(std::is_sorted(plan.levels[l].begin(), plan.levels[l].end()));
    for (NodeId v : plan.levels[l]) {
      ++seen[v];
      CHECK(plan.level_of[v] == static_cast<int>(l));
      CHECK((l == 0) == (g.kind(v) == NodeKind::PI));
      for (NodeId u : g.fanins(v)) {
        if (g.kind(u) != NodeKind::FF) CHECK(plan.level_of[u] < static_cast<int>(l));
      }
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  // FF update points are the FFs in level order.
  std::vector<NodeId> ffs = g.ffs();
  std::stable_sort(ffs.begin(), ffs.end(), [&](NodeId a, NodeId b) {
    return plan.level_of[a] != plan.level_of[b] ? plan.level_of[a] < plan.level_of[b] : a < b;
  });
  CHECK(plan.ff_update_points == ffs);

  // Regions against a reachability-matrix SCC oracle.
  const auto reach = reachability(g);
  std::set<std::vector<NodeId>> expected;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.kind(v) != NodeKind::FF || !reach[v][v]) continue;
    std::vector<NodeId> comp;
    for (NodeId u = 0; u < g.size(); ++u) {
      if (u == v || (reach[v][u] && reach[u][v])) comp.push_back(u);
    }
    if (comp.size() >= 2) expected.insert(comp);
  }
  std::set<std::vector<NodeId>> got;
  int prev_min = -1;
  for (const auto& r : plan.cyclic_regions) {
    got.insert(r.nodes);
    CHECK(r.min_level >= prev_min);
    prev_min = r.min_level;
    // Fanout cones of the triggers intersected with their fanin cones.
    std::vector<NodeId> cone;
    for (NodeId u = 0; u < g.size(); ++u) {
      bool down = false, up = false;
      for (NodeId t : r.triggers) {
        down = down || u == t || reach[t][u];
        up = up || u == t || reach[u][t];
      }
      if (down && up) cone.push_back(u);
    }
    CHECK(cone == r.nodes);
    // Triggers are exactly the FFs of the region.
    std::vector<NodeId> ff_members;
    for (NodeId u : r.nodes) {
      if (g.kind(u) == NodeKind::FF) ff_members.push_back(u);
    }
    CHECK(ff_members == r.triggers);
    // Internal order by (level, id).
    CHECK(std::is_permutation(r.order.begin(), r.order.end(), r.nodes.begin()));
    for (std::size_t k = 1; k < r.order.size(); ++k) {
      const auto a = std::make_pair(plan.level_of[r.order[k - 1]], r.order[k - 1]);
      const auto b = std::make_pair(plan.level_of[r.order[k]], r.order[k]);
      CHECK(a < b);
    }
    // Without its FFs the region is acyclic (Kahn on the induced subgraph).
    std::set<NodeId> inner;
    for (NodeId u : r.nodes) {
      if (g.kind(u) != NodeKind::FF) inner.insert(u);
    }
    std::map<NodeId, int> indeg;
    for (NodeId u : inner) {
      indeg[u] += 0;
      for (NodeId w : g.fanouts(u)) {
        if (inner.count(w)) ++indeg[w];
      }
    }
    std::vector<NodeId> ready;
    for (auto [u, d] : indeg) {
      if (d == 0) ready.push_back(u);
    }
    std::size_t removed = 0;
    while (!ready.empty()) {
      const NodeId u = ready.back();
      ready.pop_back();
      ++removed;
      for (NodeId w : g.fanouts(u)) {
        if (inner.count(w) && --indeg[w] == 0) ready.push_back(w);
      }
    }
    CHECK(removed == inner.size());
  }
  CHECK(got == expected);
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("AND of two PIs") {
  CircuitBuilder b;
  const NodeId a = b.add_pi("a"), c = b.add_pi("b");
  const NodeId x = b.add_and(a, c);
  b.add_po(x);
  const auto g = std::move(b).build();
  const auto plan = levelize(g);
  CHECK(plan.levels == std::vector<std::vector<NodeId>>{{a, c}, {x}});
  CHECK(plan.cyclic_regions.empty());
}

TEST_CASE("FF whose D input is AND(PI, FF) is cut into a level-0 source") {
  CircuitBuilder b;
  const NodeId a = b.add_pi("a");
  const NodeId ff = b.add_ff("q");
  const NodeId x = b.add_and(a, ff);
  b.set_ff_input(ff, x);
  b.add_po(x);
  const auto g = std::move(b).build();
  const auto plan = levelize(g);
  CHECK(plan.level_of[x] == 1);
  CHECK(plan.level_of[ff] == 2);
  CHECK(plan.ff_update_points == std::vector<NodeId>{ff});
  REQUIRE(plan.cyclic_regions.size() == 1);
  CHECK(plan.cyclic_regions[0].nodes == std::vector<NodeId>{ff, x});
  CHECK(plan.cyclic_regions[0].order == std::vector<NodeId>{x, ff});
}

TEST_CASE("toggle FF forms one region {FF, NOT}; a pipeline has none") {
  const auto t = testutil::toggle_ff();
  const auto plan = levelize(t);
  REQUIRE(plan.cyclic_regions.size() == 1);
  CHECK(plan.cyclic_regions[0].nodes.size() == 2);
  CHECK(plan.cyclic_regions[0].triggers == std::vector<NodeId>{*t.find("q")});
  CHECK(detect_cycles(testutil::pipeline()).empty());
}

TEST_CASE("cross-coupled FFs share one region with their AND cone") {
  CircuitBuilder b;
  const NodeId a = b.add_pi("a");
  const NodeId f1 = b.add_ff("f1"), f2 = b.add_ff("f2");
  const NodeId x = b.add_and(f1, f2);
  const NodeId y = b.add_and(x, a);
  const NodeId n = b.add_not(x);
  b.set_ff_input(f1, y);
  b.set_ff_input(f2, n);
  b.add_po(y);
  const auto g = std::move(b).build();
  const auto regions = detect_cycles(g);
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].triggers == std::vector<NodeId>{f1, f2});
  CHECK(regions[0].nodes == std::vector<NodeId>{f1, f2, x, y, n});
  check_plan(g);
}

TEST_CASE("s27 level count is the longest combinational path plus one") {
  const auto g = parse_bench(testutil::kS27);
  const auto plan = levelize(g);
  const auto lv = dfs_levels(g);
  CHECK(plan.levels.size() == static_cast<std::size_t>(*std::max_element(lv.begin(), lv.end())) + 1);
  check_plan(g);
}

TEST_CASE("random circuits: levels, update points and regions match independent oracles") {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    const double fb = (seed % 3) * 0.5;
    check_plan(testutil::random_circuit(seed, 3 + seed % 4, 20 + seed % 17, 8, 2 + seed % 5, fb));
  }
}

TEST_CASE("plans are deterministic and dump as JSON") {
  const auto g = testutil::random_circuit(7, 4, 30, 10, 4);
  CHECK(levelize(g).to_json() == levelize(g).to_json());
  const auto j = nlohmann::json::parse(levelize(g).to_json());
  CHECK(j.contains("levels"));
  CHECK(j.contains("cyclic_regions"));
}

}  // TEST_SUITE
