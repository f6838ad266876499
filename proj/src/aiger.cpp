#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "deepseq/netlist_io.hpp"

namespace dseq {
namespace {

struct Line {
  std::string_view text;
  int number;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++number;
    lines.push_back({line, number});
    if (end == text.size()) break;
    pos = end + 1;
  }
  return lines;
}

std::vector<std::uint64_t> parse_numbers(const Line& line, std::size_t want_min,
                                         std::size_t want_max) {
  std::vector<std::uint64_t> out;
  const char* p = line.text.data();
  const char* end = p + line.text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    std::uint64_t value = 0;
    auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc{} || (next < end && *next != ' ')) {
      throw ParseError("expected unsigned integers, got '" + std::string(line.text) + "'",
                       line.number);
    }
    out.push_back(value);
    p = next;
  }
  if (out.size() < want_min || out.size() > want_max) {
    throw ParseError("expected " + std::to_string(want_min) +
                         (want_min == want_max ? "" : "-" + std::to_string(want_max)) +
                         " fields, got " + std::to_string(out.size()),
                     line.number);
  }
  return out;
}

enum class VarKind { Undefined, Input, Latch, And };

}  // namespace

CircuitGraph parse_aiger(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty() || lines[0].text.substr(0, 4) != "aag ") {
    throw ParseError("missing 'aag' header", 1);
  }
  std::size_t cursor = 0;
  Line header{lines[0].text.substr(4), 1};
  auto h = parse_numbers(header, 5, 9);
  const std::uint64_t max_var = h[0], n_in = h[1], n_latch = h[2], n_out = h[3], n_and = h[4];
  for (std::size_t k = 5; k < h.size(); ++k) {
    if (h[k] != 0) throw ParseError("bad/justice/fairness sections are not supported", 1);
  }
  if (n_in + n_latch + n_and > max_var) {
    throw ParseError("header: M is smaller than I + L + A", 1);
  }
  ++cursor;

  auto take = [&](const char* what) -> const Line& {
    if (cursor >= lines.size() || lines[cursor].text.empty()) {
      const int at = cursor < lines.size() ? lines[cursor].number : lines.back().number;
      throw ParseError(std::string("unexpected end of input while reading ") + what, at);
    }
    return lines[cursor++];
  };

  std::vector<VarKind> var_kind(max_var + 1, VarKind::Undefined);
  std::vector<std::size_t> var_slot(max_var + 1, 0);
  auto define = [&](std::uint64_t lit, VarKind kind, std::size_t slot, const Line& line) {
    if (lit & 1U) throw ParseError("defined literal must be even", line.number);
    const std::uint64_t var = lit >> 1;
    if (var == 0 || var > max_var) {
      throw ParseError("literal " + std::to_string(lit) + " out of range", line.number);
    }
    if (var_kind[var] != VarKind::Undefined) {
      throw ParseError("variable " + std::to_string(var) + " defined twice", line.number);
    }
    var_kind[var] = kind;
    var_slot[var] = slot;
  };
  auto check_lit = [&](std::uint64_t lit, const Line& line) {
    if ((lit >> 1) > max_var) {
      throw ParseError("literal " + std::to_string(lit) + " out of range", line.number);
    }
  };

  std::vector<std::uint64_t> inputs;
  for (std::uint64_t i = 0; i < n_in; ++i) {
    const Line& line = take("inputs");
    auto f = parse_numbers(line, 1, 1);
    define(f[0], VarKind::Input, inputs.size(), line);
    inputs.push_back(f[0]);
  }
  struct Latch {
    std::uint64_t lit, next, init;
    int line;
  };
  std::vector<Latch> latches;
  for (std::uint64_t i = 0; i < n_latch; ++i) {
    const Line& line = take("latches");
    auto f = parse_numbers(line, 2, 3);
    define(f[0], VarKind::Latch, latches.size(), line);
    check_lit(f[1], line);
    const std::uint64_t init = f.size() == 3 ? f[2] : 0;
    if (init != 0 && init != 1 && init != f[0]) {
      throw ParseError("latch reset must be 0, 1 or the latch literal", line.number);
    }
    latches.push_back({f[0], f[1], init == 1 ? 1U : 0U, line.number});
  }
  std::vector<std::pair<std::uint64_t, int>> outputs;
  for (std::uint64_t i = 0; i < n_out; ++i) {
    const Line& line = take("outputs");
    auto f = parse_numbers(line, 1, 1);
    check_lit(f[0], line);
    outputs.emplace_back(f[0], line.number);
  }
  struct And {
    std::uint64_t lhs, rhs0, rhs1;
    int line;
  };
  std::vector<And> ands;
  for (std::uint64_t i = 0; i < n_and; ++i) {
    const Line& line = take("and gates");
    auto f = parse_numbers(line, 3, 3);
    define(f[0], VarKind::And, ands.size(), line);
    check_lit(f[1], line);
    check_lit(f[2], line);
    ands.push_back({f[0], f[1], f[2], line.number});
  }

  // Node ids: inputs, then latches, then AND gates in file order; NOT nodes
  // and the constant are appended as they are first referenced.
  std::vector<NodeKind> kinds;
  std::vector<std::vector<NodeId>> fanins;
  std::vector<NodeId> input_node, latch_node, and_node, reset_one;
  auto push = [&](NodeKind kind, std::vector<NodeId>& slots) {
    slots.push_back(static_cast<NodeId>(kinds.size()));
    kinds.push_back(kind);
    fanins.emplace_back();
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) push(NodeKind::PI, input_node);
  for (std::size_t i = 0; i < latches.size(); ++i) {
    push(NodeKind::FF, latch_node);
    if (latches[i].init) reset_one.push_back(latch_node.back());
  }
  for (std::size_t i = 0; i < ands.size(); ++i) push(NodeKind::AND, and_node);

  std::optional<NodeId> const_false;
  std::unordered_map<NodeId, NodeId> not_of;
  auto var_node = [&](std::uint64_t var, int line) -> NodeId {
    switch (var_kind[var]) {
      case VarKind::Input: return input_node[var_slot[var]];
      case VarKind::Latch: return latch_node[var_slot[var]];
      case VarKind::And: return and_node[var_slot[var]];
      case VarKind::Undefined: break;
    }
    throw ParseError("variable " + std::to_string(var) + " is used but never defined", line);
  };
  auto lit_node = [&](std::uint64_t lit, int line) -> NodeId {
    NodeId base;
    if ((lit >> 1) == 0) {
      if (!const_false) {
        const_false = static_cast<NodeId>(kinds.size());
        kinds.push_back(NodeKind::PI);
        fanins.emplace_back();
      }
      base = *const_false;
    } else {
      base = var_node(lit >> 1, line);
    }
    if ((lit & 1U) == 0) return base;
    auto it = not_of.find(base);
    if (it != not_of.end()) return it->second;
    const auto id = static_cast<NodeId>(kinds.size());
    kinds.push_back(NodeKind::NOT);
    fanins.push_back({base});
    not_of.emplace(base, id);
    return id;
  };

  for (std::size_t i = 0; i < ands.size(); ++i) {
    NodeId a = lit_node(ands[i].rhs0, ands[i].line);
    NodeId c = lit_node(ands[i].rhs1, ands[i].line);
    fanins[and_node[i]] = {a, c};
  }
  for (std::size_t i = 0; i < latches.size(); ++i) {
    fanins[latch_node[i]] = {lit_node(latches[i].next, latches[i].line)};
  }
  std::vector<NodeId> pos;
  for (auto [lit, line] : outputs) pos.push_back(lit_node(lit, line));

  // Symbol table and comments.
  std::vector<std::string> names(kinds.size());
  for (; cursor < lines.size(); ++cursor) {
    const Line& line = lines[cursor];
    if (line.text.empty()) continue;
    if (line.text[0] == 'c') break;
    const char tag = line.text[0];
    const auto space = line.text.find(' ');
    if ((tag != 'i' && tag != 'l' && tag != 'o') || space == std::string_view::npos) {
      throw ParseError("malformed symbol table entry", line.number);
    }
    std::size_t index = 0;
    auto digits = line.text.substr(1, space - 1);
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
    if (ec != std::errc{} || p != digits.data() + digits.size()) {
      throw ParseError("malformed symbol index", line.number);
    }
    std::string name(line.text.substr(space + 1));
    NodeId target = kNoNode;
    if (tag == 'i' && index < input_node.size()) target = input_node[index];
    if (tag == 'l' && index < latch_node.size()) target = latch_node[index];
    if (tag == 'o' && index < pos.size()) target = pos[index];
    if (target == kNoNode) throw ParseError("symbol index out of range", line.number);
    if (names[target].empty()) names[target] = std::move(name);
  }

  return CircuitGraph::from_parts(std::move(kinds), std::move(fanins), std::move(pos),
                                 std::move(names), const_false, reset_one);
}

std::string emit_aiger(const CircuitGraph& g) {
  require_valid(g);
  const std::size_t n = g.size();
  std::vector<std::uint64_t> lit(n, 0);
  std::uint64_t var = 0;
  std::vector<NodeId> inputs, ands;
  for (NodeId v : g.pis()) {
    if (g.const_false() && *g.const_false() == v) continue;
    lit[v] = 2 * ++var;
    inputs.push_back(v);
  }
  for (NodeId v : g.ffs()) lit[v] = 2 * ++var;
  for (NodeId v = 0; v < n; ++v) {
    if (g.kind(v) == NodeKind::AND) {
      lit[v] = 2 * ++var;
      ands.push_back(v);
    }
  }
  // NOT literals resolve through chains of NOT nodes.
  std::vector<bool> done(n, false);
  for (NodeId v = 0; v < n; ++v) done[v] = g.kind(v) != NodeKind::NOT;
  auto literal = [&](NodeId v) {
    std::vector<NodeId> chain;
    NodeId u = v;
    while (!done[u]) {
      chain.push_back(u);
      u = g.fanins(u)[0];
    }
    std::uint64_t l = lit[u];
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      l ^= 1U;
      lit[*it] = l;
      done[*it] = true;
    }
    return lit[v];
  };

  std::ostringstream os;
  os << "aag " << var << ' ' << inputs.size() << ' ' << g.ffs().size() << ' ' << g.pos().size()
     << ' ' << ands.size() << '\n';
  for (NodeId v : inputs) os << lit[v] << '\n';
  for (NodeId v : g.ffs()) {
    os << lit[v] << ' ' << literal(g.fanins(v)[0]);
    if (g.ff_init(v)) os << " 1";
    os << '\n';
  }
  for (NodeId v : g.pos()) os << literal(v) << '\n';
  for (NodeId v : ands) {
    os << lit[v] << ' ' << literal(g.fanins(v)[0]) << ' ' << literal(g.fanins(v)[1]) << '\n';
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (g.has_name(inputs[i])) os << 'i' << i << ' ' << g.name(inputs[i]) << '\n';
  }
  for (std::size_t i = 0; i < g.ffs().size(); ++i) {
    if (g.has_name(g.ffs()[i])) os << 'l' << i << ' ' << g.name(g.ffs()[i]) << '\n';
  }
  for (std::size_t i = 0; i < g.pos().size(); ++i) {
    NodeId v = g.pos()[i];
    if (g.has_name(v) && g.is_combinational(v)) os << 'o' << i << ' ' << g.name(v) << '\n';
  }
  return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

CircuitGraph load_circuit(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  const std::string text = read_text_file(path);
  try {
    if (ext == ".bench") return parse_bench(text);
    return parse_aiger(text);
  } catch (const ParseError& e) {
    throw e.in(path.string());
  }
}

}  // namespace dseq
