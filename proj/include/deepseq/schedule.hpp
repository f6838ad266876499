#pragma once

#include <string>
#include <vector>

#include "deepseq/circuit.hpp"

namespace dseq {

/// Feedback-affected sub-circuit: one strongly connected component of the
/// full graph that contains at least one FF and at least two nodes.
struct CyclicRegion {
  std::vector<NodeId> triggers;  // FFs in the region, ascending id
  std::vector<NodeId> nodes;     // all members, ascending id
  std::vector<NodeId> order;     // members by (level, id): the re-sweep order
  int min_level = 0;
};

/// Level-by-level propagation plan over the FF-cut graph.
///
/// levels[0] holds the PIs. Combinational nodes sit one level above their
/// deepest fanin, where an FF fanin counts as a level-0 source. An FF sits
/// one level above its D input, which is where its state is refreshed.
struct PropagationPlan {
  std::vector<std::vector<NodeId>> levels;
  std::vector<int> level_of;
  std::vector<NodeId> ff_update_points;
  std::vector<CyclicRegion> cyclic_regions;

  std::string to_json() const;
};

/// Builds the plan, including cyclic regions. Throws std::invalid_argument
/// on a combinational loop.
PropagationPlan levelize(const CircuitGraph& g);

/// Cyclic regions in processing order (ascending minimum level, then id).
/// `level_of` supplies levels for the internal order; pass the plan's.
std::vector<CyclicRegion> detect_cycles(const CircuitGraph& g, const std::vector<int>& level_of);
std::vector<CyclicRegion> detect_cycles(const CircuitGraph& g);

}  // namespace dseq
