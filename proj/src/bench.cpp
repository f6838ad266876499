#include <cctype>
#include <map>
#include <set>
#include <unordered_map>

#include "deepseq/netlist_io.hpp"

namespace dseq {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

struct Call {
  std::string op;
  std::vector<std::string> args;
};

Call parse_call(std::string_view text, int line) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw ParseError("expected OP(args)", line);
  }
  Call call;
  call.op = upper(trim(text.substr(0, open)));
  std::string_view inner = text.substr(open + 1, close - open - 1);
  std::size_t pos = 0;
  while (pos <= inner.size()) {
    auto comma = inner.find(',', pos);
    if (comma == std::string_view::npos) comma = inner.size();
    auto arg = trim(inner.substr(pos, comma - pos));
    if (arg.empty()) throw ParseError("empty argument", line);
    call.args.emplace_back(arg);
    pos = comma + 1;
  }
  if (!trim(text.substr(close + 1)).empty()) throw ParseError("trailing text after ')'", line);
  return call;
}

struct Gate {
  Call call;
  int line;
};

class BenchLowering {
 public:
  BenchLowering(std::map<std::string, Gate, std::less<>> gates) : gates_(std::move(gates)) {}

  CircuitGraph run(const std::vector<std::pair<std::string, int>>& inputs,
                   const std::vector<std::pair<std::string, int>>& outputs,
                   const std::vector<std::string>& gate_order,
                   const std::vector<std::string>& dff_order) {
    for (const auto& [name, line] : inputs) {
      if (nets_.count(name) || gates_.count(name)) throw ParseError("net '" + name + "' redefined", line);
      nets_[name] = b_.add_pi(name);
    }
    for (const auto& name : dff_order) nets_[name] = b_.add_ff(name);
    for (const auto& name : gate_order) resolve(name, gates_.at(name).line);
    for (const auto& name : dff_order) {
      const Gate& g = gates_.at(name);
      b_.set_ff_input(nets_.at(name), resolve(g.call.args[0], g.line));
    }
    for (const auto& [name, line] : outputs) b_.add_po(resolve(name, line));
    return std::move(b_).build();
  }

 private:
  NodeId synth_not(NodeId x) {
    auto it = not_of_.find(x);
    if (it != not_of_.end()) return it->second;
    NodeId id = b_.add_not(x);
    b_.set_name(id, "$" + std::to_string(id));
    not_of_.emplace(x, id);
    synth_.insert(id);
    return id;
  }

  NodeId synth_and(NodeId a, NodeId c) {
    NodeId id = b_.add_and(a, c);
    b_.set_name(id, "$" + std::to_string(id));
    return id;
  }

  NodeId and_chain(const std::vector<NodeId>& xs, const std::string& name) {
    NodeId acc = xs[0];
    for (std::size_t i = 1; i + 1 < xs.size(); ++i) acc = synth_and(acc, xs[i]);
    return b_.add_and(acc, xs.back(), name);
  }

  NodeId resolve(const std::string& name, int use_line) {
    if (auto it = nets_.find(name); it != nets_.end()) return it->second;
    auto git = gates_.find(name);
    if (git == gates_.end()) throw ParseError("dangling net '" + name + "'", use_line);
    if (!active_.insert(name).second) {
      throw ParseError("combinational loop through '" + name + "'", git->second.line);
    }
    const Gate& gate = git->second;
    std::vector<NodeId> in;
    for (const auto& arg : gate.call.args) in.push_back(resolve(arg, gate.line));
    const std::string& op = gate.call.op;
    NodeId out;
    if (op == "NOT") {
      auto cached = not_of_.find(in[0]);
      if (cached != not_of_.end() && synth_.erase(cached->second) > 0) {
        out = cached->second;
        b_.set_name(out, name);
      } else {
        out = b_.add_not(in[0], name);
        not_of_.try_emplace(in[0], out);
      }
    } else if (op == "AND") {
      out = and_chain(in, name);
    } else if (op == "NAND") {
      NodeId acc = in[0];
      for (std::size_t i = 1; i < in.size(); ++i) acc = synth_and(acc, in[i]);
      out = b_.add_not(acc, name);
      not_of_.try_emplace(acc, out);
    } else if (op == "OR" || op == "NOR") {
      std::vector<NodeId> neg;
      for (NodeId x : in) neg.push_back(synth_not(x));
      if (op == "NOR") {
        out = and_chain(neg, name);
      } else {
        NodeId acc = neg[0];
        for (std::size_t i = 1; i < neg.size(); ++i) acc = synth_and(acc, neg[i]);
        out = b_.add_not(acc, name);
        not_of_.try_emplace(acc, out);
      }
    } else {
      throw ParseError("unknown gate type '" + op + "'", gate.line);
    }
    active_.erase(name);
    nets_[name] = out;
    return out;
  }

  std::map<std::string, Gate, std::less<>> gates_;
  std::unordered_map<std::string, NodeId> nets_;
  std::unordered_map<NodeId, NodeId> not_of_;
  std::set<std::string> active_;
  std::set<NodeId> synth_;  // lowering NOTs that still carry a synthesized name
  CircuitBuilder b_;
};

}  // namespace

CircuitGraph parse_bench(std::string_view text) {
  std::vector<std::pair<std::string, int>> inputs, outputs;
  std::map<std::string, Gate, std::less<>> gates;
  std::vector<std::string> gate_order, dff_order;
  int number = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      Call call = parse_call(line, number);
      if (call.args.size() != 1) throw ParseError(call.op + " takes one net", number);
      if (call.op == "INPUT") {
        inputs.emplace_back(call.args[0], number);
      } else if (call.op == "OUTPUT") {
        outputs.emplace_back(call.args[0], number);
      } else {
        throw ParseError("expected INPUT, OUTPUT or an assignment", number);
      }
      continue;
    }
    std::string lhs(trim(line.substr(0, eq)));
    if (lhs.empty()) throw ParseError("missing net name before '='", number);
    Call call = parse_call(line.substr(eq + 1), number);
    const std::string& op = call.op;
    const bool unary = op == "NOT" || op == "DFF";
    const bool nary = op == "AND" || op == "NAND" || op == "OR" || op == "NOR";
    if (!unary && !nary) throw ParseError("unknown gate type '" + op + "'", number);
    if (unary && call.args.size() != 1) throw ParseError(op + " takes one input", number);
    if (nary && call.args.size() < 2) throw ParseError(op + " needs at least two inputs", number);
    if (gates.count(lhs)) throw ParseError("net '" + lhs + "' redefined", number);
    (op == "DFF" ? dff_order : gate_order).push_back(lhs);
    gates.emplace(lhs, Gate{std::move(call), number});
  }
  return BenchLowering(std::move(gates)).run(inputs, outputs, gate_order, dff_order);
}

bool has_original_name(const CircuitGraph& g, NodeId v) {
  return g.has_name(v) && g.name(v)[0] != '$';
}

}  // namespace dseq
