#pragma once

// Bit-parallel evaluation shared by the simulator and the fault injector.
// One 64-bit word carries one node's value for 64 patterns.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "deepseq/circuit.hpp"
#include "deepseq/simulate.hpp"

namespace dseq::detail {

constexpr std::size_t kLanes = 64;

/// AND/NOT nodes in an order where every non-FF fanin comes first.
std::vector<NodeId> combinational_order(const CircuitGraph& g);

/// Per-pattern PI stimulus for one block of up to 64 patterns.
/// Layout: words[cycle * n_pi + pi_index], bit = lane.
void draw_block_stimulus(const CircuitGraph& g, const std::vector<MarkovParams>& chains,
                         const Workload& w, std::uint64_t seed, std::size_t first_pattern,
                         std::size_t lanes, std::size_t n_cycles,
                         std::vector<std::uint64_t>& words);

std::vector<MarkovParams> chains_for(const CircuitGraph& g, const Workload& w);

inline std::uint64_t lane_mask(std::size_t lanes) {
  return lanes >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << lanes) - 1);
}

/// One cycle: PIs from the stimulus, FFs from `state`, then combinational
/// logic. Does not latch; the caller copies D values into `state`.
inline void eval_cycle(const CircuitGraph& g, std::span<const NodeId> order,
                       std::span<const std::uint64_t> pi_words, std::span<const std::uint64_t> state,
                       std::span<std::uint64_t> vals) {
  const auto& pis = g.pis();
  for (std::size_t i = 0; i < pis.size(); ++i) vals[pis[i]] = pi_words[i];
  const auto& ffs = g.ffs();
  for (std::size_t i = 0; i < ffs.size(); ++i) vals[ffs[i]] = state[i];
  for (NodeId v : order) {
    const auto fi = g.fanins(v);
    vals[v] = g.kind(v) == NodeKind::AND ? (vals[fi[0]] & vals[fi[1]]) : ~vals[fi[0]];
  }
}

/// Same as eval_cycle, but XORs `flips[v]` into every node's value as soon
/// as it is produced, so flipped values propagate downstream.
inline void eval_cycle_faulty(const CircuitGraph& g, std::span<const NodeId> order,
                              std::span<const std::uint64_t> pi_words,
                              std::span<const std::uint64_t> state,
                              std::span<const std::uint64_t> flips, std::span<std::uint64_t> vals) {
  const auto& pis = g.pis();
  for (std::size_t i = 0; i < pis.size(); ++i) vals[pis[i]] = pi_words[i] ^ flips[pis[i]];
  const auto& ffs = g.ffs();
  for (std::size_t i = 0; i < ffs.size(); ++i) vals[ffs[i]] = state[i] ^ flips[ffs[i]];
  for (NodeId v : order) {
    const auto fi = g.fanins(v);
    const std::uint64_t x = g.kind(v) == NodeKind::AND ? (vals[fi[0]] & vals[fi[1]]) : ~vals[fi[0]];
    vals[v] = x ^ flips[v];
  }
}

/// Runs `body(block_index)` for every block, spread over `workers` threads.
void parallel_blocks(std::size_t n_blocks, unsigned workers,
                     const std::function<void(std::size_t)>& body);

}  // namespace dseq::detail
