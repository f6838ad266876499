#include "deepseq/supervise.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sim_kernel.hpp"

namespace dseq {
namespace {

bool is_constant(const CircuitGraph& g, NodeId v) {
  return g.const_false() && *g.const_false() == v;
}

// Combinational cone membership as one bitset row per node.
class ConeSets {
 public:
  explicit ConeSets(const CircuitGraph& g)
      : words_((g.size() + 63) / 64), bits_(g.size() * words_, 0) {
    for (NodeId v : detail::combinational_order(g)) {
      for (NodeId u : g.fanins(v)) merge(v, u);
    }
    for (NodeId v = 0; v < g.size(); ++v) set(v, v);
  }

  bool intersect(NodeId a, NodeId b) const {
    const std::uint64_t* x = row(a);
    const std::uint64_t* y = row(b);
    for (std::size_t k = 0; k < words_; ++k) {
      if (x[k] & y[k]) return true;
    }
    return false;
  }

 private:
  std::uint64_t* row(NodeId v) { return bits_.data() + v * words_; }
  const std::uint64_t* row(NodeId v) const { return bits_.data() + v * words_; }
  void set(NodeId v, NodeId m) { row(v)[m / 64] |= std::uint64_t{1} << (m % 64); }
  // Sources contribute only themselves; set() at the end covers that.
  void merge(NodeId v, NodeId u) {
    std::uint64_t* dst = row(v);
    const std::uint64_t* src = row(u);
    for (std::size_t k = 0; k < words_; ++k) dst[k] |= src[k];
    set(v, u);
  }

  std::size_t words_;
  std::vector<std::uint64_t> bits_;
};

std::vector<std::vector<NodeId>> all_supports(const CircuitGraph& g) {
  std::vector<std::vector<NodeId>> supp(g.size());
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.is_source(v) && !is_constant(g, v)) supp[v] = {v};
  }
  for (NodeId v : detail::combinational_order(g)) {
    std::vector<NodeId> acc;
    for (NodeId u : g.fanins(v)) {
      std::vector<NodeId> merged;
      std::set_union(acc.begin(), acc.end(), supp[u].begin(), supp[u].end(),
                     std::back_inserter(merged));
      acc.swap(merged);
    }
    supp[v] = std::move(acc);
  }
  return supp;
}

std::size_t union_size(const std::vector<NodeId>& a, const std::vector<NodeId>& b,
                       std::size_t limit) {
  std::size_t i = 0, j = 0, count = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i] < b[j])) {
      ++i;
    } else if (i == a.size() || b[j] < a[i]) {
      ++j;
    } else {
      ++i;
      ++j;
    }
    if (++count > limit) return count;
  }
  return count;
}

// Truth tables of i and j over `support`; returns the distance.
double distance_over(const CircuitGraph& g, NodeId i, NodeId j, const std::vector<NodeId>& support,
                     const std::vector<NodeId>& order) {
  const std::size_t k = support.size();
  const std::size_t rows = std::size_t{1} << k;
  const std::size_t words = std::max<std::size_t>(1, rows / 64);
  const std::uint64_t last_mask = rows >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << rows) - 1;

  // Restrict evaluation to the union of both cones.
  std::vector<char> needed(g.size(), 0);
  std::vector<NodeId> stack{i, j};
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    if (needed[v]) continue;
    needed[v] = 1;
    if (g.is_combinational(v)) {
      for (NodeId u : g.fanins(v)) stack.push_back(u);
    }
  }
  std::vector<std::vector<std::uint64_t>> tt(g.size());
  for (std::size_t s = 0; s < k; ++s) {
    auto& t = tt[support[s]];
    t.assign(words, 0);
    for (std::size_t x = 0; x < rows; ++x) {
      if ((x >> s) & 1U) t[x / 64] |= std::uint64_t{1} << (x % 64);
    }
  }
  if (g.const_false() && needed[*g.const_false()]) tt[*g.const_false()].assign(words, 0);
  for (NodeId v : order) {
    if (!needed[v]) continue;
    const auto fi = g.fanins(v);
    auto& t = tt[v];
    t.resize(words);
    for (std::size_t w = 0; w < words; ++w) {
      t[w] = g.kind(v) == NodeKind::AND ? tt[fi[0]][w] & tt[fi[1]][w] : ~tt[fi[0]][w];
    }
  }
  std::size_t diff = 0;
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t x = tt[i][w] ^ tt[j][w];
    if (w + 1 == words) x &= last_mask;
    diff += static_cast<std::size_t>(std::popcount(x));
  }
  return static_cast<double>(diff) / static_cast<double>(rows);
}

std::size_t scaled_target(const CircuitGraph& g, double per_circuit) {
  constexpr double kCorpusNodes = 214.35;
  return static_cast<std::size_t>(
      std::llround(per_circuit * static_cast<double>(g.size()) / kCorpusNodes));
}

}  // namespace

std::vector<RcPair> reconvergence_pairs(const CircuitGraph& g) {
  require_valid(g);
  ConeSets cones(g);
  std::vector<RcPair> out;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.kind(v) != NodeKind::AND) continue;
    const NodeId a = g.fanins(v)[0], b = g.fanins(v)[1];
    out.push_back({a, b, v, static_cast<std::uint8_t>(cones.intersect(a, b) ? 1 : 0)});
  }
  return out;
}

std::vector<NodeId> combinational_support(const CircuitGraph& g, NodeId v) {
  std::vector<NodeId> out;
  std::vector<char> seen(g.size(), 0);
  std::vector<NodeId> stack{v};
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    if (seen[u]) continue;
    seen[u] = 1;
    if (g.is_source(u)) {
      if (!is_constant(g, u)) out.push_back(u);
      continue;
    }
    for (NodeId w : g.fanins(u)) stack.push_back(w);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double truth_table_distance(const CircuitGraph& g, NodeId i, NodeId j) {
  if (!g.is_combinational(i) || !g.is_combinational(j)) {
    throw std::invalid_argument("truth_table_distance: both nodes must be combinational");
  }
  const auto si = combinational_support(g, i);
  const auto sj = combinational_support(g, j);
  std::vector<NodeId> support;
  std::set_union(si.begin(), si.end(), sj.begin(), sj.end(), std::back_inserter(support));
  if (support.size() > kMaxTruthTableSupport) {
    throw std::invalid_argument("truth_table_distance: joint support of " +
                                std::to_string(support.size()) + " exceeds 16");
  }
  return distance_over(g, i, j, support, detail::combinational_order(g));
}

std::size_t default_f_target(const CircuitGraph& g) { return scaled_target(g, 543.17); }
std::size_t default_ffsim_target(const CircuitGraph& g) { return scaled_target(g, 495.26); }

std::vector<FPair> sample_f_pairs(const CircuitGraph& g, std::size_t target, std::uint64_t seed) {
  require_valid(g);
  const auto supp = all_supports(g);
  std::vector<NodeId> comb;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.is_combinational(v) && supp[v].size() <= kMaxTruthTableSupport) comb.push_back(v);
  }
  std::vector<std::pair<NodeId, NodeId>> eligible;
  for (std::size_t x = 0; x < comb.size(); ++x) {
    for (std::size_t y = x + 1; y < comb.size(); ++y) {
      if (union_size(supp[comb[x]], supp[comb[y]], kMaxTruthTableSupport) <=
          kMaxTruthTableSupport) {
        eligible.emplace_back(comb[x], comb[y]);
      }
    }
  }
  Rng rng(seed);
  rng.shuffle(eligible);
  if (eligible.size() > target) eligible.resize(target);
  std::sort(eligible.begin(), eligible.end());

  const auto order = detail::combinational_order(g);
  std::vector<FPair> out;
  out.reserve(eligible.size());
  for (auto [i, j] : eligible) {
    std::vector<NodeId> support;
    std::set_union(supp[i].begin(), supp[i].end(), supp[j].begin(), supp[j].end(),
                   std::back_inserter(support));
    out.push_back({i, j, distance_over(g, i, j, support, order)});
  }
  return out;
}

std::vector<FfProfile> ff_profiles(const CircuitGraph& g) {
  const std::size_t n = g.size();
  // 0-1 BFS from every PI; entering an FF costs one stage.
  std::vector<int> dist(n, -1);
  std::deque<NodeId> queue;
  for (NodeId pi : g.pis()) {
    if (is_constant(g, pi)) continue;
    dist[pi] = 0;
    queue.push_back(pi);
  }
  std::vector<int> best(n, std::numeric_limits<int>::max());
  for (NodeId pi : g.pis()) {
    if (!is_constant(g, pi)) best[pi] = 0;
  }
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (NodeId v : g.fanouts(u)) {
      const int cost = g.kind(v) == NodeKind::FF ? 1 : 0;
      if (best[u] + cost < best[v]) {
        best[v] = best[u] + cost;
        if (cost == 0) {
          queue.push_front(v);
        } else {
          queue.push_back(v);
        }
      }
    }
  }
  std::vector<FfProfile> out(g.ffs().size());
  for (std::size_t k = 0; k < g.ffs().size(); ++k) {
    const NodeId ff = g.ffs()[k];
    FfProfile& p = out[k];
    p.depth = best[ff] == std::numeric_limits<int>::max() ? -1 : best[ff];
    std::vector<char> seen(n, 0);
    std::vector<NodeId> stack(g.fanins(ff).begin(), g.fanins(ff).end());
    while (!stack.empty()) {
      NodeId u = stack.back();
      stack.pop_back();
      if (seen[u]) continue;
      seen[u] = 1;
      if (g.kind(u) == NodeKind::PI) {
        if (!is_constant(g, u)) p.pi_support.push_back(u);
        continue;
      }
      for (NodeId w : g.fanins(u)) stack.push_back(w);
    }
    std::sort(p.pi_support.begin(), p.pi_support.end());
  }
  return out;
}

bool ff_pair_eligible(const CircuitGraph& g, NodeId i, NodeId j) {
  if (g.kind(i) != NodeKind::FF || g.kind(j) != NodeKind::FF) {
    throw std::invalid_argument("ff_pair_eligible: both nodes must be FFs");
  }
  const auto profiles = ff_profiles(g);
  const auto& a = profiles[static_cast<std::size_t>(g.ff_index(i))];
  const auto& b = profiles[static_cast<std::size_t>(g.ff_index(j))];
  return !a.pi_support.empty() && a.pi_support == b.pi_support && a.depth == b.depth;
}

std::optional<double> ff_similarity(const StateTrace& a, const StateTrace& b) {
  if (a.n_patterns() != b.n_patterns() || a.n_cycles() != b.n_cycles()) {
    throw std::invalid_argument("ff_similarity: traces are not aligned");
  }
  const std::size_t cycles = a.n_cycles();
  if (cycles < 2) return std::nullopt;
  const std::size_t stride = a.stride();
  // Bit p of `eq` says both FFs hold the same state at cycle p. A state match
  // is counted at p = t-1 for t in [1, cycles); a transition match also needs
  // bit p+1.
  std::uint64_t same_state = 0, same_trans = 0;
  for (std::size_t p = 0; p < a.n_patterns(); ++p) {
    const std::uint64_t* x = a.words().data() + p * stride;
    const std::uint64_t* y = b.words().data() + p * stride;
    for (std::size_t w = 0; w < stride; ++w) {
      const std::uint64_t eq = ~(x[w] ^ y[w]);
      const std::uint64_t eq_next_word = w + 1 < stride ? ~(x[w + 1] ^ y[w + 1]) : 0;
      const std::uint64_t shifted = (eq >> 1) | (eq_next_word << 63);
      // Positions w*64 + bit that are <= cycles - 2.
      const std::size_t base = w * 64;
      std::uint64_t valid = 0;
      if (cycles - 1 > base) {
        const std::size_t count = std::min<std::size_t>(64, cycles - 1 - base);
        valid = count >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << count) - 1;
      }
      same_state += static_cast<std::uint64_t>(std::popcount(eq & valid));
      same_trans += static_cast<std::uint64_t>(std::popcount(eq & shifted & valid));
    }
  }
  if (same_state == 0) return std::nullopt;
  return static_cast<double>(same_trans) / static_cast<double>(same_state);
}

LabelSet build_labelset(const CircuitGraph& g, const Workload& w, const LabelConfig& cfg,
                        LabelDiagnostics* diag) {
  require_valid(g);
  LabelDiagnostics local;
  LabelDiagnostics& d = diag ? *diag : local;
  d = {};

  const SimStats stats = simulate(g, w, cfg.sim);
  LabelSet labels;
  labels.p1 = stats.p1;
  labels.ptr = stats.ptr;
  labels.rc = reconvergence_pairs(g);

  const std::size_t f_target = cfg.f_target.value_or(default_f_target(g));
  labels.f = sample_f_pairs(g, f_target, stream_key(cfg.seed, 1));
  {
    const auto supp = all_supports(g);
    for (NodeId x = 0; x < g.size(); ++x) {
      if (!g.is_combinational(x) || supp[x].size() > kMaxTruthTableSupport) continue;
      for (NodeId y = x + 1; y < g.size(); ++y) {
        if (g.is_combinational(y) &&
            union_size(supp[x], supp[y], kMaxTruthTableSupport) <= kMaxTruthTableSupport) {
          ++d.f_eligible;
        }
      }
    }
  }

  // FF pairs: eligible under the predicate, shuffled, labelled until the
  // target is met. Pairs whose states never coincide are skipped.
  const auto profiles = ff_profiles(g);
  std::vector<std::pair<NodeId, NodeId>> candidates;
  const auto& ffs = g.ffs();
  for (std::size_t x = 0; x < ffs.size(); ++x) {
    for (std::size_t y = x + 1; y < ffs.size(); ++y) {
      bool ok;
      if (cfg.ff_predicate) {
        ok = cfg.ff_predicate(g, ffs[x], ffs[y]);
      } else {
        ok = !profiles[x].pi_support.empty() && profiles[x].pi_support == profiles[y].pi_support &&
             profiles[x].depth == profiles[y].depth;
      }
      if (ok) candidates.emplace_back(ffs[x], ffs[y]);
    }
  }
  d.ff_eligible = candidates.size();
  Rng rng(stream_key(cfg.seed, 2));
  rng.shuffle(candidates);
  const std::size_t ff_target = cfg.ffsim_target.value_or(default_ffsim_target(g));
  for (auto [i, j] : candidates) {
    if (labels.ffsim.size() >= ff_target) break;
    const auto sim = ff_similarity(stats.traces[static_cast<std::size_t>(g.ff_index(i))],
                                   stats.traces[static_cast<std::size_t>(g.ff_index(j))]);
    if (!sim) {
      ++d.ffsim_skipped;
      continue;
    }
    labels.ffsim.push_back({i, j, *sim});
  }
  std::sort(labels.ffsim.begin(), labels.ffsim.end(),
            [](const FfPair& a, const FfPair& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
  return labels;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::string DatasetRecord::to_json_line() const {
  nlohmann::ordered_json j;
  j["circuit_path"] = circuit_path;
  j["sim"] = {{"n_patterns", sim.n_patterns}, {"n_cycles", sim.n_cycles}, {"seed", sim.seed}};
  auto pis = nlohmann::ordered_json::array();
  for (const auto& s : workload.pis) pis.push_back({{"p1", s.p1}, {"ptr", s.ptr}});
  j["workload"] = {{"pis", pis}};
  j["p1"] = labels.p1;
  j["ptr"] = labels.ptr;
  auto rc = nlohmann::ordered_json::array();
  for (const auto& r : labels.rc) {
    rc.push_back({{"a", r.a}, {"b", r.b}, {"gate", r.gate}, {"label", r.label}});
  }
  j["rc"] = std::move(rc);
  auto f = nlohmann::ordered_json::array();
  for (const auto& p : labels.f) f.push_back({{"i", p.i}, {"j", p.j}, {"d", p.distance}});
  j["f"] = std::move(f);
  auto ff = nlohmann::ordered_json::array();
  for (const auto& p : labels.ffsim) ff.push_back({{"i", p.i}, {"j", p.j}, {"sim", p.sim}});
  j["ffsim"] = std::move(ff);
  return j.dump();
}

DatasetRecord DatasetRecord::from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  DatasetRecord r;
  r.circuit_path = j.at("circuit_path").get<std::string>();
  if (j.contains("sim")) {
    r.sim.n_patterns = j["sim"].at("n_patterns").get<std::size_t>();
    r.sim.n_cycles = j["sim"].at("n_cycles").get<std::size_t>();
    r.sim.seed = j["sim"].at("seed").get<std::uint64_t>();
  }
  for (const auto& e : j.at("workload").at("pis")) {
    r.workload.pis.push_back({e.at("p1").get<double>(), e.at("ptr").get<double>()});
  }
  r.labels.p1 = j.at("p1").get<std::vector<double>>();
  r.labels.ptr = j.at("ptr").get<std::vector<double>>();
  auto check01 = [](double x, const char* what) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(std::string(what) + " label outside [0,1]");
    return x;
  };
  for (const auto& e : j.at("rc")) {
    const auto label = e.at("label").get<int>();
    if (label != 0 && label != 1) throw std::invalid_argument("rc label must be 0 or 1");
    r.labels.rc.push_back({e.at("a").get<NodeId>(), e.at("b").get<NodeId>(), e.at("gate").get<NodeId>(),
                           static_cast<std::uint8_t>(label)});
  }
  for (const auto& e : j.at("f")) {
    r.labels.f.push_back({e.at("i").get<NodeId>(), e.at("j").get<NodeId>(), check01(e.at("d").get<double>(), "f")});
  }
  for (const auto& e : j.at("ffsim")) {
    r.labels.ffsim.push_back(
        {e.at("i").get<NodeId>(), e.at("j").get<NodeId>(), check01(e.at("sim").get<double>(), "ffsim")});
  }
  return r;
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(DatasetRecord::from_json_line(line));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), number, path);
    }
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) out << r.to_json_line() << '\n';
}

}  // namespace dseq
