#include "deepseq/downstream.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deepseq/netlist_io.hpp"
#include "sim_kernel.hpp"

namespace dseq {

double power_estimate(const std::vector<double>& tr, const PowerConfig& pc,
                      const std::vector<bool>& mask) {
  if (!(pc.capacitance > 0 && pc.vdd > 0 && pc.frequency > 0)) {
    throw std::invalid_argument("power_estimate: capacitance, vdd and frequency must be positive");
  }
  if (mask.size() != tr.size()) throw std::invalid_argument("power_estimate: mask size mismatch");
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < tr.size(); ++v) {
    if (!mask[v]) continue;
    if (!(tr[v] >= 0.0 && tr[v] <= 1.0)) {
      throw std::invalid_argument("power_estimate: transition probability outside [0,1]");
    }
    sum += tr[v];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("power_estimate: empty mask");
  return 0.5 * pc.capacitance * pc.vdd * pc.vdd * (sum / static_cast<double>(count)) * pc.frequency;
}

std::vector<bool> power_mask(const CircuitGraph& g) {
  bool lowered = false;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.has_name(v) && !has_original_name(g, v)) lowered = true;
  }
  std::vector<bool> mask(g.size(), true);
  if (lowered) {
    for (NodeId v = 0; v < g.size(); ++v) mask[v] = has_original_name(g, v);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// SAIF
// ---------------------------------------------------------------------------

std::string saif_net_name(const CircuitGraph& g, NodeId v) {
  if (g.has_name(v)) {
    bool ok = true;
    for (char c : g.name(v)) {
      if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')' || c == '"') ok = false;
    }
    if (ok) return g.name(v);
  }
  return "__n" + std::to_string(v);
}

SaifExport export_saif(const CircuitGraph& g, const std::vector<double>& p1,
                       const std::vector<double>& ptr, std::uint64_t duration,
                       const std::string& design) {
  if (p1.size() != g.size() || ptr.size() != g.size()) {
    throw std::invalid_argument("export_saif: per-node values do not match the graph");
  }
  if (duration == 0) throw std::invalid_argument("export_saif: duration must be positive");
  SaifExport out;
  std::ostringstream os;
  os << "(SAIFILE\n"
     << "  (SAIFVERSION \"2.0\")\n"
     << "  (DIRECTION \"backward\")\n"
     << "  (DESIGN \"" << design << "\")\n"
     << "  (TIMESCALE 1 ns)\n"
     << "  (DURATION " << duration << ")\n"
     << "  (INSTANCE " << design << "\n"
     << "    (NET\n";
  const double d = static_cast<double>(duration);
  for (NodeId v = 0; v < g.size(); ++v) {
    const std::string name = saif_net_name(g, v);
    if (name != g.name(v)) out.warnings.push_back("node " + std::to_string(v) + " written as " + name);
    const auto t1 = static_cast<std::uint64_t>(std::llround(std::clamp(p1[v], 0.0, 1.0) * d));
    const auto tc = static_cast<std::uint64_t>(std::llround(std::clamp(ptr[v], 0.0, 1.0) * d));
    os << "      (" << name << " (T0 " << duration - t1 << ") (T1 " << t1 << ") (TC " << tc << "))\n";
  }
  os << "    )\n  )\n)\n";
  out.text = os.str();
  return out;
}

namespace {

struct Sexp {
  bool is_atom = false;
  std::string atom;
  std::vector<Sexp> items;
  int line = 0;
};

class SexpReader {
 public:
  explicit SexpReader(std::string_view text) : text_(text) {}

  Sexp read() {
    skip();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of SAIF input", line_);
    Sexp s;
    s.line = line_;
    if (text_[pos_] == '(') {
      ++pos_;
      while (true) {
        skip();
        if (pos_ >= text_.size()) throw ParseError("unbalanced '(' in SAIF input", s.line);
        if (text_[pos_] == ')') {
          ++pos_;
          break;
        }
        s.items.push_back(read());
      }
      return s;
    }
    if (text_[pos_] == ')') throw ParseError("unexpected ')'", line_);
    s.is_atom = true;
    if (text_[pos_] == '"') {
      const auto end = text_.find('"', pos_ + 1);
      if (end == std::string_view::npos) throw ParseError("unterminated string", line_);
      s.atom = std::string(text_.substr(pos_ + 1, end - pos_ - 1));
      pos_ = end + 1;
      return s;
    }
    const auto start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')') {
      ++pos_;
    }
    s.atom = std::string(text_.substr(start, pos_ - start));
    return s;
  }

  bool at_end() {
    skip();
    return pos_ >= text_.size();
  }
  int line() const { return line_; }

 private:
  void skip() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\n') ++line_;
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '/') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

const std::string& head(const Sexp& s) {
  static const std::string empty;
  return !s.is_atom && !s.items.empty() && s.items[0].is_atom ? s.items[0].atom : empty;
}

std::uint64_t to_count(const Sexp& s) {
  if (!s.is_atom) throw ParseError("expected an integer", s.line);
  std::uint64_t v = 0;
  std::size_t used = 0;
  try {
    v = std::stoull(s.atom, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.atom.size() || s.atom.empty() || s.atom[0] == '-') {
    throw ParseError("expected a non-negative integer, got '" + s.atom + "'", s.line);
  }
  return v;
}

void read_nets(const Sexp& net_block, SaifData& out) {
  for (std::size_t i = 1; i < net_block.items.size(); ++i) {
    const Sexp& e = net_block.items[i];
    if (e.is_atom || e.items.empty() || !e.items[0].is_atom) throw ParseError("malformed NET entry", e.line);
    SaifNet net;
    bool t0 = false, t1 = false, tc = false;
    for (std::size_t k = 1; k < e.items.size(); ++k) {
      const Sexp& f = e.items[k];
      const auto& key = head(f);
      if (f.items.size() != 2) throw ParseError("malformed field in NET entry", f.line);
      if (key == "T0") {
        net.t0 = to_count(f.items[1]);
        t0 = true;
      } else if (key == "T1") {
        net.t1 = to_count(f.items[1]);
        t1 = true;
      } else if (key == "TC") {
        net.tc = to_count(f.items[1]);
        tc = true;
      }
    }
    if (!(t0 && t1 && tc)) throw ParseError("NET entry lacks T0, T1 or TC", e.line);
    if (!out.nets.emplace(e.items[0].atom, net).second) {
      throw ParseError("duplicate net '" + e.items[0].atom + "'", e.line);
    }
  }
}

}  // namespace

SaifData parse_saif(std::string_view text) {
  SexpReader reader(text);
  const Sexp root = reader.read();
  if (!reader.at_end()) throw ParseError("trailing content after SAIFILE", reader.line());
  if (head(root) != "SAIFILE") throw ParseError("expected (SAIFILE ...)", root.line);
  SaifData out;
  bool have_duration = false;
  for (std::size_t i = 1; i < root.items.size(); ++i) {
    const Sexp& s = root.items[i];
    const auto& key = head(s);
    if (key == "DESIGN" && s.items.size() >= 2) {
      out.design = s.items[1].atom;
    } else if (key == "DURATION") {
      if (s.items.size() != 2) throw ParseError("malformed DURATION", s.line);
      out.duration = to_count(s.items[1]);
      have_duration = true;
    } else if (key == "INSTANCE") {
      for (std::size_t k = 1; k < s.items.size(); ++k) {
        if (head(s.items[k]) == "NET") read_nets(s.items[k], out);
      }
    }
  }
  if (!have_duration || out.duration == 0) throw ParseError("missing or zero DURATION", root.line);
  for (const auto& [name, net] : out.nets) {
    if (net.t0 + net.t1 != out.duration) {
      throw ParseError("net '" + name + "': T0 + T1 differs from DURATION", root.line);
    }
  }
  return out;
}

void saif_probabilities(const CircuitGraph& g, const SaifData& data, std::vector<double>& p1,
                        std::vector<double>& ptr) {
  p1.assign(g.size(), 0.0);
  ptr.assign(g.size(), 0.0);
  const double d = static_cast<double>(data.duration);
  for (NodeId v = 0; v < g.size(); ++v) {
    const auto name = saif_net_name(g, v);
    auto it = data.nets.find(name);
    if (it == data.nets.end()) throw std::invalid_argument("SAIF has no net '" + name + "'");
    p1[v] = static_cast<double>(it->second.t1) / d;
    ptr[v] = static_cast<double>(it->second.tc) / d;
  }
}

// ---------------------------------------------------------------------------
// Fault simulation
// ---------------------------------------------------------------------------

namespace {

struct FaultTotals {
  std::vector<std::uint64_t> zeros, ones, n01, n10, f_ones, f_toggles;
};

// Positions of flip events in (cycle, site, lane) order, drawn with
// geometric gaps so the cost scales with the number of events.
class FlipStream {
 public:
  FlipStream(double q, std::uint64_t key, std::uint64_t size)
      : rng_(key), size_(size), log1mq_(q > 0 ? std::log1p(-q) : 0.0), active_(q > 0) {
    advance(0);
  }

  std::uint64_t next() const { return next_; }
  void pop() { advance(next_ + 1); }

 private:
  void advance(std::uint64_t from) {
    if (!active_) {
      next_ = size_;
      return;
    }
    const double gap = std::floor(std::log1p(-rng_.uniform()) / log1mq_);
    const double pos = static_cast<double>(from) + gap;
    next_ = pos >= static_cast<double>(size_) ? size_ : static_cast<std::uint64_t>(pos);
  }

  Rng rng_;
  std::uint64_t size_;
  double log1mq_;
  bool active_;
  std::uint64_t next_ = 0;
};

}  // namespace

FaultRun fault_simulate(const CircuitGraph& g, const Workload& w, const FaultConfig& fc) {
  if (!(fc.flip_prob >= 0.0 && fc.flip_prob < 1.0)) {
    throw std::invalid_argument("flip probability must lie in [0, 1)");
  }
  if (fc.n_patterns < 1 || fc.n_cycles < 2) {
    throw std::invalid_argument("fault simulation needs n_patterns >= 1 and n_cycles >= 2");
  }
  require_valid(g);
  const std::size_t n = g.size();
  std::vector<NodeId> sites = fc.sites;
  if (sites.empty()) {
    for (NodeId v = 0; v < n; ++v) {
      if (g.const_false() != v) sites.push_back(v);
    }
  }
  for (NodeId v : sites) {
    if (v >= n) throw std::invalid_argument("fault site out of range");
  }
  const auto chains = detail::chains_for(g, w);
  const auto order = detail::combinational_order(g);
  const std::size_t n_ff = g.ffs().size();
  const std::size_t n_pi = g.pis().size();
  const std::size_t n_blocks = (fc.n_patterns + detail::kLanes - 1) / detail::kLanes;
  const std::uint64_t per_cycle = static_cast<std::uint64_t>(sites.size()) * detail::kLanes;

  FaultRun run;
  run.faulty.n_patterns = fc.n_patterns;
  run.faulty.n_cycles = fc.n_cycles;
  run.faulty.traces.assign(n_ff, StateTrace(fc.n_patterns, fc.n_cycles));
  std::vector<FaultTotals> totals(n_blocks);

  detail::parallel_blocks(n_blocks, fc.workers, [&](std::size_t block) {
    const std::size_t first = block * detail::kLanes;
    const std::size_t lanes = std::min(detail::kLanes, fc.n_patterns - first);
    const std::uint64_t mask = detail::lane_mask(lanes);
    std::vector<std::uint64_t> stim;
    detail::draw_block_stimulus(g, chains, w, fc.seed, first, lanes, fc.n_cycles, stim);
    FlipStream flips_at(fc.flip_prob, stream_key(fc.seed, 0xfa017, block), per_cycle * fc.n_cycles);

    std::vector<std::uint64_t> good(n), bad(n), prev_bad(n), flips(n, 0);
    std::vector<std::uint64_t> state_good(n_ff), state_bad(n_ff);
    for (std::size_t i = 0; i < n_ff; ++i) {
      state_good[i] = state_bad[i] = g.ff_init(g.ffs()[i]) ? mask : 0;
    }
    FaultTotals& t = totals[block];
    for (auto* v : {&t.zeros, &t.ones, &t.n01, &t.n10, &t.f_ones, &t.f_toggles}) v->assign(n, 0);

    for (std::size_t c = 0; c < fc.n_cycles; ++c) {
      std::fill(flips.begin(), flips.end(), 0);
      const std::uint64_t end = per_cycle * (c + 1);
      while (flips_at.next() < end) {
        const std::uint64_t local = flips_at.next() - per_cycle * c;
        flips[sites[local / detail::kLanes]] ^= std::uint64_t{1} << (local % detail::kLanes);
        flips_at.pop();
      }
      const std::span<const std::uint64_t> pi_words{stim.data() + c * n_pi, n_pi};
      detail::eval_cycle(g, order, pi_words, state_good, good);
      detail::eval_cycle_faulty(g, order, pi_words, state_bad, flips, bad);
      for (std::size_t v = 0; v < n; ++v) {
        const std::uint64_t gv = good[v] & mask, bv = bad[v] & mask;
        t.ones[v] += static_cast<std::uint64_t>(std::popcount(gv));
        t.zeros[v] += static_cast<std::uint64_t>(std::popcount(~gv & mask));
        t.n01[v] += static_cast<std::uint64_t>(std::popcount(~gv & bv & mask));
        t.n10[v] += static_cast<std::uint64_t>(std::popcount(gv & ~bv & mask));
        t.f_ones[v] += static_cast<std::uint64_t>(std::popcount(bv));
        if (c > 0) t.f_toggles[v] += static_cast<std::uint64_t>(std::popcount((bv ^ prev_bad[v]) & mask));
      }
      for (std::size_t i = 0; i < n_ff; ++i) {
        std::uint64_t bits = state_bad[i] & mask;
        while (bits) {
          const int lane = std::countr_zero(bits);
          bits &= bits - 1;
          run.faulty.traces[i].set(first + static_cast<std::size_t>(lane), c, true);
        }
      }
      for (std::size_t i = 0; i < n_ff; ++i) {
        const NodeId d = g.fanins(g.ffs()[i])[0];
        state_good[i] = good[d];
        state_bad[i] = bad[d];
      }
      prev_bad.swap(bad);
    }
  });

  FlipLabels& L = run.labels;
  L.p01.assign(n, 0.0);
  L.p10.assign(n, 0.0);
  L.zeros.assign(n, 0);
  L.ones.assign(n, 0);
  run.faulty.p1.assign(n, 0.0);
  run.faulty.ptr.assign(n, 0.0);
  const double evals = static_cast<double>(fc.n_patterns) * static_cast<double>(fc.n_cycles);
  const double pairs = static_cast<double>(fc.n_patterns) * static_cast<double>(fc.n_cycles - 1);
  for (std::size_t v = 0; v < n; ++v) {
    std::uint64_t n01 = 0, n10 = 0, f_ones = 0, f_tog = 0;
    for (const auto& t : totals) {
      L.zeros[v] += t.zeros[v];
      L.ones[v] += t.ones[v];
      n01 += t.n01[v];
      n10 += t.n10[v];
      f_ones += t.f_ones[v];
      f_tog += t.f_toggles[v];
    }
    L.p01[v] = L.zeros[v] ? static_cast<double>(n01) / static_cast<double>(L.zeros[v]) : 0.0;
    L.p10[v] = L.ones[v] ? static_cast<double>(n10) / static_cast<double>(L.ones[v]) : 0.0;
    run.faulty.p1[v] = static_cast<double>(f_ones) / evals;
    run.faulty.ptr[v] = static_cast<double>(f_tog) / pairs;
  }
  return run;
}

FlipLabels reliability_labels(const CircuitGraph& g, const Workload& w, const FaultConfig& fc) {
  return fault_simulate(g, w, fc).labels;
}

std::string ReliabilityRecord::to_json_line() const {
  nlohmann::ordered_json j;
  j["circuit_path"] = circuit_path;
  j["flip_prob"] = flip_prob;
  j["sim"] = {{"n_patterns", sim.n_patterns}, {"n_cycles", sim.n_cycles}, {"seed", sim.seed}};
  auto pis = nlohmann::ordered_json::array();
  for (const auto& s : workload.pis) pis.push_back({{"p1", s.p1}, {"ptr", s.ptr}});
  j["workload"] = {{"pis", pis}};
  j["p01"] = labels.p01;
  j["p10"] = labels.p10;
  j["zeros"] = labels.zeros;
  j["ones"] = labels.ones;
  return j.dump();
}

ReliabilityRecord ReliabilityRecord::from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  ReliabilityRecord r;
  r.circuit_path = j.at("circuit_path").get<std::string>();
  r.flip_prob = j.at("flip_prob").get<double>();
  r.sim.n_patterns = j.at("sim").at("n_patterns").get<std::size_t>();
  r.sim.n_cycles = j.at("sim").at("n_cycles").get<std::size_t>();
  r.sim.seed = j.at("sim").at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("workload").at("pis")) {
    r.workload.pis.push_back({e.at("p1").get<double>(), e.at("ptr").get<double>()});
  }
  r.labels.p01 = j.at("p01").get<std::vector<double>>();
  r.labels.p10 = j.at("p10").get<std::vector<double>>();
  r.labels.zeros = j.at("zeros").get<std::vector<std::uint64_t>>();
  r.labels.ones = j.at("ones").get<std::vector<std::uint64_t>>();
  const std::size_t n = r.labels.p01.size();
  if (r.labels.p10.size() != n || r.labels.zeros.size() != n || r.labels.ones.size() != n) {
    throw std::invalid_argument("reliability record arrays differ in length");
  }
  for (std::size_t v = 0; v < n; ++v) {
    for (double x : {r.labels.p01[v], r.labels.p10[v]}) {
      if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("flip label outside [0,1]");
    }
  }
  return r;
}

std::vector<ReliabilityRecord> read_reliability(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ReliabilityRecord> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(ReliabilityRecord::from_json_line(line));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), number, path);
    }
  }
  return out;
}

void write_reliability(const std::string& path, const std::vector<ReliabilityRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) out << r.to_json_line() << '\n';
}

}  // namespace dseq
