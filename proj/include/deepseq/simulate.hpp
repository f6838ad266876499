#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepseq/circuit.hpp"
#include "deepseq/rng.hpp"

namespace dseq {

struct PiStimulus {
  double p1 = 0.5;   // logic-1 probability
  double ptr = 0.5;  // per-cycle transition probability
};

/// Stimulus for every PI, indexed like CircuitGraph::pis(). The constant
/// PI, if any, is always driven to 0 whatever its entry says.
struct Workload {
  std::vector<PiStimulus> pis;

  static Workload uniform(const CircuitGraph& g, double p1 = 0.5, double ptr = 0.5);
  /// p1 ~ U[lo, hi], ptr ~ U[0, max feasible].
  static Workload random(const CircuitGraph& g, Rng& rng, double lo = 0.1, double hi = 0.9);

  std::string to_json(const CircuitGraph& g) const;
  /// Entries are matched by PI name when present, else by position.
  static Workload from_json(const CircuitGraph& g, std::string_view text);
};

bool feasible(const PiStimulus& s);

struct MarkovParams {
  double rise;  // P(0 -> 1)
  double fall;  // P(1 -> 0)
};

/// Two-state chain with stationary probability p1 and change rate ptr.
/// Throws std::invalid_argument unless ptr <= 2 min(p1, 1 - p1).
MarkovParams markov_params(double p1, double ptr);

struct SimConfig {
  std::size_t n_patterns = 1000;
  std::size_t n_cycles = 100;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// Packed per-FF state bits, [n_patterns x n_cycles], one row per pattern.
class StateTrace {
 public:
  StateTrace() = default;
  StateTrace(std::size_t n_patterns, std::size_t n_cycles);

  bool get(std::size_t pattern, std::size_t cycle) const {
    return (words_[pattern * stride_ + cycle / 64] >> (cycle % 64)) & 1U;
  }
  void set(std::size_t pattern, std::size_t cycle, bool bit);

  std::size_t n_patterns() const { return n_patterns_; }
  std::size_t n_cycles() const { return n_cycles_; }
  std::size_t stride() const { return stride_; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }

  bool operator==(const StateTrace&) const = default;

 private:
  std::size_t n_patterns_ = 0, n_cycles_ = 0, stride_ = 0;
  std::vector<std::uint64_t> words_;
};

struct SimStats {
  std::size_t n_patterns = 0;
  std::size_t n_cycles = 0;
  std::vector<double> p1;   // per node
  std::vector<double> ptr;  // per node
  // Sums over patterns of the squared per-pattern p1 / ptr, for standard
  // errors that respect within-pattern correlation.
  std::vector<double> p1_sq;
  std::vector<double> ptr_sq;
  std::vector<StateTrace> traces;  // per FF, indexed like CircuitGraph::ffs()

  bool operator==(const SimStats&) const = default;

  std::string to_json(const CircuitGraph& g) const;
};

/// Monte Carlo sequential simulation. Each pattern resets the FFs, starts
/// the PI chains from their stationary distribution and runs n_cycles
/// cycles. Deterministic in (g, w, cfg.seed) for any worker count.
SimStats simulate(const CircuitGraph& g, const Workload& w, const SimConfig& cfg);

/// Exact expectation of simulate()'s estimators over the same horizon,
/// computed by propagating the distribution of the joint (PI, FF) state.
/// Limited to 12 PIs and 8 FFs.
SimStats exhaustive_stats(const CircuitGraph& g, const Workload& w, std::size_t n_cycles = 100);

inline constexpr std::size_t kExhaustiveMaxPis = 12;
inline constexpr std::size_t kExhaustiveMaxFfs = 8;

/// Binary FF trace file: "DSQTRACE", u32 version, u32 n_ff, u32 n_patterns,
/// u32 n_cycles, then every FF's rows as little-endian u64 words.
void write_traces(const std::filesystem::path& path, const std::vector<StateTrace>& traces);
std::vector<StateTrace> read_traces(const std::filesystem::path& path);

}  // namespace dseq
