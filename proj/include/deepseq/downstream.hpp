#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepseq/circuit.hpp"
#include "deepseq/simulate.hpp"

namespace dseq {

// ---------------------------------------------------------------------------
// Power
// ---------------------------------------------------------------------------

struct PowerConfig {
  double capacitance = 1.0;  // per gate
  double vdd = 1.0;
  double frequency = 1.0;
};

/// P = 1/2 C Vdd^2 * mean(tr over mask) * frequency. Throws
/// std::invalid_argument on an empty mask or tr outside [0, 1].
double power_estimate(const std::vector<double>& tr, const PowerConfig& pc,
                      const std::vector<bool>& mask);

/// Nodes that correspond to nets of the source netlist. A netlist lowered
/// from BENCH keeps its original names only on surviving nets; every other
/// graph uses all nodes.
std::vector<bool> power_mask(const CircuitGraph& g);

// ---------------------------------------------------------------------------
// SAIF
// ---------------------------------------------------------------------------

struct SaifNet {
  std::uint64_t t0 = 0, t1 = 0, tc = 0;
  bool operator==(const SaifNet&) const = default;
};

struct SaifData {
  std::string design;
  std::uint64_t duration = 0;
  std::map<std::string, SaifNet> nets;
};

struct SaifExport {
  std::string text;
  std::vector<std::string> warnings;  // nodes given synthesized names
};

/// One NET entry per node: T1 = round(p1 D), T0 = D - T1, TC = round(ptr D).
/// Nodes without a usable name are written as "__n<id>".
SaifExport export_saif(const CircuitGraph& g, const std::vector<double>& p1,
                       const std::vector<double>& ptr, std::uint64_t duration,
                       const std::string& design = "top");

/// Name used for node v in SAIF output.
std::string saif_net_name(const CircuitGraph& g, NodeId v);

/// Reads the subset written by export_saif. Throws ParseError.
SaifData parse_saif(std::string_view text);

/// Per-node (p1, ptr) = (T1, TC) / DURATION, matched by saif_net_name.
/// Nodes missing from the file are an error.
void saif_probabilities(const CircuitGraph& g, const SaifData& data, std::vector<double>& p1,
                        std::vector<double>& ptr);

// ---------------------------------------------------------------------------
// Reliability
// ---------------------------------------------------------------------------

struct FaultConfig {
  double flip_prob = 0.0005;  // per node per cycle evaluation
  std::size_t n_patterns = 1000;
  std::size_t n_cycles = 100;
  std::uint64_t seed = 0;  // PI streams match simulate() with this seed
  unsigned workers = 1;
  std::vector<NodeId> sites;  // nodes that may flip; empty = every non-constant node
};

struct FlipLabels {
  std::vector<double> p01;  // P(faulty = 1 | fault-free = 0)
  std::vector<double> p10;  // P(faulty = 0 | fault-free = 1)
  std::vector<std::uint64_t> zeros;  // fault-free 0 evaluations (p01 denominator)
  std::vector<std::uint64_t> ones;   // fault-free 1 evaluations (p10 denominator)

  /// A label is undefined (and reported as 0) when its denominator is 0.
  bool p01_defined(NodeId v) const { return zeros[v] > 0; }
  bool p10_defined(NodeId v) const { return ones[v] > 0; }
  bool operator==(const FlipLabels&) const = default;
};

struct FaultRun {
  FlipLabels labels;
  SimStats faulty;  // p1, ptr and FF traces of the faulty run (no second moments)
};

/// Paired fault-free / faulty simulation with shared PI streams. Flip events
/// come from a separate stream; deterministic in the seed for any worker
/// count.
FaultRun fault_simulate(const CircuitGraph& g, const Workload& w, const FaultConfig& fc);

FlipLabels reliability_labels(const CircuitGraph& g, const Workload& w, const FaultConfig& fc);

struct ReliabilityRecord {
  std::string circuit_path;
  Workload workload;
  double flip_prob = 0;
  SimConfig sim;  // patterns, cycles and seed used
  FlipLabels labels;

  std::string to_json_line() const;
  static ReliabilityRecord from_json_line(std::string_view line);
};

std::vector<ReliabilityRecord> read_reliability(const std::string& path);
void write_reliability(const std::string& path, const std::vector<ReliabilityRecord>& records);

}  // namespace dseq
