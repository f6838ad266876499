#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepseq/circuit.hpp"
#include "deepseq/simulate.hpp"

namespace dseq {

struct RcPair {
  NodeId a, b, gate;
  std::uint8_t label;  // 1 when the two fanin cones share a node
  bool operator==(const RcPair&) const = default;
};

struct FPair {
  NodeId i, j;
  double distance;  // normalized truth-table Hamming distance
  bool operator==(const FPair&) const = default;
};

struct FfPair {
  NodeId i, j;
  double sim;  // state-transition similarity
  bool operator==(const FfPair&) const = default;
};

/// All supervision for one (circuit, workload).
struct LabelSet {
  std::vector<double> p1;   // per node
  std::vector<double> ptr;  // per node
  std::vector<RcPair> rc;
  std::vector<FPair> f;
  std::vector<FfPair> ffsim;
  bool operator==(const LabelSet&) const = default;
};

inline constexpr std::size_t kMaxTruthTableSupport = 16;

/// Label per AND gate: do its fanin cones (stopping at PIs and FF outputs)
/// intersect?
std::vector<RcPair> reconvergence_pairs(const CircuitGraph& g);

/// Sources (PIs and FF outputs, constant excluded) in the combinational
/// cone of v, ascending.
std::vector<NodeId> combinational_support(const CircuitGraph& g, NodeId v);

/// Normalized Hamming distance of the exhaustive truth tables of two
/// combinational nodes over their joint support. Throws
/// std::invalid_argument when the joint support exceeds 16 inputs.
double truth_table_distance(const CircuitGraph& g, NodeId i, NodeId j);

/// 543.17 and 495.26 pairs per 214.35-node circuit, scaled by size.
std::size_t default_f_target(const CircuitGraph& g);
std::size_t default_ffsim_target(const CircuitGraph& g);

/// Uniform sample without replacement of distinct combinational pairs
/// whose joint support has at most 16 inputs.
std::vector<FPair> sample_f_pairs(const CircuitGraph& g, std::size_t target, std::uint64_t seed);

/// Predicate choosing which FF pairs get a similarity label.
using FfPairPredicate = std::function<bool(const CircuitGraph&, NodeId, NodeId)>;

struct FfProfile {
  std::vector<NodeId> pi_support;  // PIs reaching the FF through any path
  int depth = -1;                  // min FFs on a PI -> FF path; -1 if none
};

std::vector<FfProfile> ff_profiles(const CircuitGraph& g);

/// Same PI support and the same sequential depth.
bool ff_pair_eligible(const CircuitGraph& g, NodeId i, NodeId j);

/// Ratio of cycles with matching transitions to cycles with matching
/// previous state, over all patterns. Empty when the states never match.
std::optional<double> ff_similarity(const StateTrace& a, const StateTrace& b);

struct LabelConfig {
  SimConfig sim;
  std::optional<std::size_t> f_target;      // default_f_target when unset
  std::optional<std::size_t> ffsim_target;  // default_ffsim_target when unset
  std::uint64_t seed = 0;
  FfPairPredicate ff_predicate;             // ff_pair_eligible when empty
};

struct LabelDiagnostics {
  std::size_t f_eligible = 0;
  std::size_t ff_eligible = 0;
  std::size_t ffsim_skipped = 0;  // eligible pairs whose states never matched
};

LabelSet build_labelset(const CircuitGraph& g, const Workload& w, const LabelConfig& cfg,
                        LabelDiagnostics* diag = nullptr);

/// One line of the JSON-lines dataset.
struct DatasetRecord {
  std::string circuit_path;
  Workload workload;
  LabelSet labels;
  SimConfig sim;

  std::string to_json_line() const;
  static DatasetRecord from_json_line(std::string_view line);
};

std::vector<DatasetRecord> read_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records);

}  // namespace dseq
