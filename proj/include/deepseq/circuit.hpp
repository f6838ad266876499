#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dseq {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class NodeKind : std::uint8_t { PI, AND, NOT, FF };

std::string_view to_string(NodeKind kind);
int expected_arity(NodeKind kind);

/// Error raised by the netlist readers. Carries the 1-based line number of
/// the offending input line (0 when the error is not tied to a line).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line, const std::string& source = {})
      : std::runtime_error((source.empty() ? "" : source + ": ") +
                           (line > 0 ? "line " + std::to_string(line) + ": " : "") + what),
        detail_(what),
        line_(line) {}
  int line() const { return line_; }
  const std::string& detail() const { return detail_; }
  /// Same error attributed to a named input (usually a file path).
  ParseError in(const std::string& source) const { return ParseError(detail_, line_, source); }

 private:
  std::string detail_;
  int line_;
};

/// Directed sequential netlist over {PI, AND, NOT, FF}.
///
/// Node ids are dense. Fanin order is kept as given because it is semantic
/// for attention aggregation. An FF's single fanin is its D input; its output
/// is the node itself. The graph is immutable once built; use
/// CircuitBuilder or CircuitGraph::from_parts to make one.
class CircuitGraph {
 public:
  CircuitGraph() = default;

  /// Assemble a graph without checking invariants (see validate()).
  /// `reset_one` lists FFs whose reset value is 1.
  static CircuitGraph from_parts(std::vector<NodeKind> kinds,
                                 std::vector<std::vector<NodeId>> fanins,
                                 std::vector<NodeId> pos,
                                 std::vector<std::string> names = {},
                                 std::optional<NodeId> const_false = std::nullopt,
                                 const std::vector<NodeId>& reset_one = {});

  std::size_t size() const { return kinds_.size(); }
  NodeKind kind(NodeId v) const { return kinds_[v]; }
  std::span<const NodeId> fanins(NodeId v) const { return fanins_[v]; }
  std::span<const NodeId> fanouts(NodeId v) const { return fanouts_[v]; }
  std::span<const NodeKind> kinds() const { return kinds_; }

  const std::vector<NodeId>& pis() const { return pis_; }
  const std::vector<NodeId>& ffs() const { return ffs_; }
  const std::vector<NodeId>& pos() const { return pos_; }

  bool is_source(NodeId v) const {
    return kinds_[v] == NodeKind::PI || kinds_[v] == NodeKind::FF;
  }
  bool is_combinational(NodeId v) const {
    return kinds_[v] == NodeKind::AND || kinds_[v] == NodeKind::NOT;
  }

  /// The PI standing for constant false, if the netlist references it.
  std::optional<NodeId> const_false() const { return const_false_; }

  /// Index of a PI within pis(), or -1.
  int pi_index(NodeId v) const { return pi_index_[v]; }
  /// Index of an FF within ffs(), or -1.
  int ff_index(NodeId v) const { return ff_index_[v]; }

  /// FF reset value (0 by default).
  bool ff_init(NodeId ff) const { return ff_init_[v_ff(ff)] != 0; }

  const std::string& name(NodeId v) const { return names_[v]; }
  bool has_name(NodeId v) const { return !names_[v].empty(); }
  std::optional<NodeId> find(std::string_view name) const;

  std::size_t count(NodeKind kind) const;

 private:
  friend class CircuitBuilder;
  std::size_t v_ff(NodeId ff) const { return static_cast<std::size_t>(ff_index_[ff]); }
  void finalize();

  std::vector<NodeKind> kinds_;
  std::vector<std::vector<NodeId>> fanins_;
  std::vector<std::vector<NodeId>> fanouts_;
  std::vector<NodeId> pis_, ffs_, pos_;
  std::vector<int> pi_index_, ff_index_;
  std::vector<std::uint8_t> ff_init_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeId> by_name_;
  std::optional<NodeId> const_false_;
};

class CircuitBuilder {
 public:
  NodeId add_pi(std::string name = {});
  NodeId add_const_false();
  NodeId add_and(NodeId a, NodeId b, std::string name = {});
  NodeId add_not(NodeId a, std::string name = {});
  /// Adds an FF with its D input left open; connect it with set_ff_input().
  NodeId add_ff(std::string name = {}, bool init = false);
  void set_ff_input(NodeId ff, NodeId d);
  void set_ff_init(NodeId ff, bool init);
  void add_po(NodeId v);
  void set_name(NodeId v, std::string name);

  std::size_t size() const { return kinds_.size(); }
  NodeKind kind(NodeId v) const { return kinds_[v]; }
  std::span<const NodeId> fanins(NodeId v) const { return fanins_[v]; }

  CircuitGraph build() &&;

 private:
  NodeId push(NodeKind kind, std::vector<NodeId> fanins, std::string name);

  std::vector<NodeKind> kinds_;
  std::vector<std::vector<NodeId>> fanins_;
  std::vector<std::string> names_;
  std::vector<NodeId> pos_;
  std::vector<std::pair<NodeId, bool>> ff_inits_;
  std::optional<NodeId> const_false_;
};

struct Violation {
  NodeId node;
  std::string rule;
};

/// Checks every CircuitGraph invariant; returns an empty list iff all hold.
std::vector<Violation> validate(const CircuitGraph& g);

/// Throws std::invalid_argument listing the first violations.
void require_valid(const CircuitGraph& g);

}  // namespace dseq
