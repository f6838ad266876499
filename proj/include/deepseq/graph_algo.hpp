#pragma once

#include <vector>

#include "deepseq/circuit.hpp"

namespace dseq {

/// Strongly connected components of the full graph (FF edges included),
/// Tarjan's algorithm without recursion. Members of each component are
/// sorted by id; components are ordered by their smallest id.
std::vector<std::vector<NodeId>> strongly_connected_components(const CircuitGraph& g);

/// Nodes on at least one directed cycle (SCC with two or more nodes, or a
/// node feeding itself).
std::vector<bool> on_cycle(const CircuitGraph& g);

}  // namespace dseq
