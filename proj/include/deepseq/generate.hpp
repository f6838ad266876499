#pragma once

#include <cstdint>
#include <string>

#include "deepseq/circuit.hpp"
#include "deepseq/rng.hpp"

namespace dseq {

struct GenSpec {
  std::size_t n_pi = 4;
  std::size_t n_and = 20;
  std::size_t n_not = 10;
  std::size_t n_ff = 4;
  std::uint64_t seed = 0;
  /// Probability that an FF's D-input cone contains the FF's own output.
  double feedback_prob = 0.5;
};

struct GenSummary {
  std::size_t n_pi = 0, n_and = 0, n_not = 0, n_ff = 0;
  std::uint64_t seed = 0;
  std::size_t feedback_requested = 0;  // FFs that drew a feedback D input
  std::size_t feedback_wired = 0;      // of those, how many got one
  std::size_t ffs_on_cycle = 0;
  std::size_t not_shortfall = 0;       // NOT gates that had no legal driver

  std::string to_json() const;
};

struct Generated {
  CircuitGraph graph;
  GenSummary summary;
};

/// Random sequential AIG. Deterministic in the seed; the result always
/// passes validate(). Throws std::invalid_argument on an infeasible spec.
Generated generate(const GenSpec& spec);

/// About 8% PIs, 10% FFs, 30% NOTs and the rest ANDs for n total nodes.
GenSpec spec_for_size(std::size_t n, std::uint64_t seed, double feedback_prob = 0.5);

/// Draws a node count from N(214.35, 92.63^2) clamped to [24, 700], split as
/// in spec_for_size.
GenSpec corpus_like_spec(Rng& rng, double feedback_prob = 0.5);

}  // namespace dseq
