#include "deepseq/simulate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "deepseq/schedule.hpp"
#include "sim_kernel.hpp"

namespace dseq {

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

bool feasible(const PiStimulus& s) {
  if (!(s.p1 >= 0.0 && s.p1 <= 1.0 && s.ptr >= 0.0 && s.ptr <= 1.0)) return false;
  return s.ptr <= 2.0 * std::min(s.p1, 1.0 - s.p1) + 1e-12;
}

MarkovParams markov_params(double p1, double ptr) {
  if (!feasible({p1, ptr})) {
    throw std::invalid_argument("infeasible workload: p1=" + std::to_string(p1) +
                                " ptr=" + std::to_string(ptr));
  }
  if (p1 <= 0.0 || p1 >= 1.0) return {0.0, 0.0};
  // Stationarity: rise (1 - p1) = fall p1; change rate: 2 rise (1 - p1) = ptr.
  const double rise = std::min(1.0, ptr / (2.0 * (1.0 - p1)));
  const double fall = std::min(1.0, ptr / (2.0 * p1));
  return {rise, fall};
}

Workload Workload::uniform(const CircuitGraph& g, double p1, double ptr) {
  Workload w;
  w.pis.assign(g.pis().size(), PiStimulus{p1, ptr});
  return w;
}

Workload Workload::random(const CircuitGraph& g, Rng& rng, double lo, double hi) {
  Workload w;
  for (std::size_t i = 0; i < g.pis().size(); ++i) {
    const double p1 = lo + (hi - lo) * rng.uniform();
    const double ptr = 2.0 * std::min(p1, 1.0 - p1) * rng.uniform();
    w.pis.push_back({p1, ptr});
  }
  return w;
}

std::string Workload::to_json(const CircuitGraph& g) const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < pis.size(); ++i) {
    nlohmann::ordered_json e;
    if (i < g.pis().size() && g.has_name(g.pis()[i])) e["name"] = g.name(g.pis()[i]);
    e["p1"] = pis[i].p1;
    e["ptr"] = pis[i].ptr;
    arr.push_back(std::move(e));
  }
  return nlohmann::ordered_json{{"pis", arr}}.dump(2);
}

Workload Workload::from_json(const CircuitGraph& g, std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  const auto& arr = j.at("pis");
  Workload w = uniform(g);
  std::vector<bool> covered(g.pis().size(), false);
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto& e = arr[k];
    std::size_t index = k;
    if (e.contains("name")) {
      auto id = g.find(e.at("name").get<std::string>());
      if (!id || g.pi_index(*id) < 0) {
        throw std::invalid_argument("workload names unknown PI '" +
                                    e.at("name").get<std::string>() + "'");
      }
      index = static_cast<std::size_t>(g.pi_index(*id));
    }
    if (index >= w.pis.size()) throw std::invalid_argument("workload has more entries than PIs");
    w.pis[index] = {e.at("p1").get<double>(), e.at("ptr").get<double>()};
    covered[index] = true;
  }
  for (std::size_t i = 0; i < covered.size(); ++i) {
    const bool is_const = g.const_false() && *g.const_false() == g.pis()[i];
    if (!covered[i] && !is_const) {
      throw std::invalid_argument("workload does not cover PI " + std::to_string(i));
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// StateTrace
// ---------------------------------------------------------------------------

StateTrace::StateTrace(std::size_t n_patterns, std::size_t n_cycles)
    : n_patterns_(n_patterns),
      n_cycles_(n_cycles),
      stride_((n_cycles + 63) / 64),
      words_(n_patterns * stride_, 0) {}

void StateTrace::set(std::size_t pattern, std::size_t cycle, bool bit) {
  auto& w = words_[pattern * stride_ + cycle / 64];
  const std::uint64_t m = std::uint64_t{1} << (cycle % 64);
  w = bit ? (w | m) : (w & ~m);
}

// ---------------------------------------------------------------------------
// Kernel helpers
// ---------------------------------------------------------------------------

namespace detail {

std::vector<NodeId> combinational_order(const CircuitGraph& g) {
  const auto plan = levelize(g);
  std::vector<NodeId> order;
  for (const auto& level : plan.levels) {
    for (NodeId v : level) {
      if (g.is_combinational(v)) order.push_back(v);
    }
  }
  return order;
}

std::vector<MarkovParams> chains_for(const CircuitGraph& g, const Workload& w) {
  if (w.pis.size() != g.pis().size()) {
    throw std::invalid_argument("workload covers " + std::to_string(w.pis.size()) + " PIs, circuit has " +
                                std::to_string(g.pis().size()));
  }
  std::vector<MarkovParams> chains;
  for (std::size_t i = 0; i < w.pis.size(); ++i) {
    const bool is_const = g.const_false() && *g.const_false() == g.pis()[i];
    chains.push_back(is_const ? MarkovParams{0.0, 0.0} : markov_params(w.pis[i].p1, w.pis[i].ptr));
  }
  return chains;
}

void draw_block_stimulus(const CircuitGraph& g, const std::vector<MarkovParams>& chains,
                         const Workload& w, std::uint64_t seed, std::size_t first_pattern,
                         std::size_t lanes, std::size_t n_cycles, std::vector<std::uint64_t>& words) {
  const std::size_t n_pi = g.pis().size();
  words.assign(n_cycles * n_pi, 0);
  std::vector<std::uint8_t> bit(n_pi);
  std::vector<double> p1(n_pi);
  for (std::size_t i = 0; i < n_pi; ++i) {
    const bool is_const = g.const_false() && *g.const_false() == g.pis()[i];
    p1[i] = is_const ? 0.0 : w.pis[i].p1;
  }
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    Rng rng(stream_key(seed, first_pattern + lane));
    const std::uint64_t m = std::uint64_t{1} << lane;
    for (std::size_t t = 0; t < n_cycles; ++t) {
      std::uint64_t* row = words.data() + t * n_pi;
      for (std::size_t i = 0; i < n_pi; ++i) {
        const double u = rng.uniform();
        if (t == 0) {
          bit[i] = u < p1[i];
        } else if (bit[i]) {
          bit[i] = !(u < chains[i].fall);
        } else {
          bit[i] = u < chains[i].rise;
        }
        if (bit[i]) row[i] |= m;
      }
    }
  }
}

void parallel_blocks(std::size_t n_blocks, unsigned workers,
                     const std::function<void(std::size_t)>& body) {
  workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(n_blocks)));
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) body(b);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned k = 0; k < workers; ++k) {
    pool.emplace_back([&, k] {
      try {
        for (std::size_t b = k; b < n_blocks; b += workers) body(b);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

namespace {

// Bit-sliced per-lane counters: plane k holds bit k of each lane's count.
struct SlicedCounters {
  std::size_t planes;
  std::vector<std::uint64_t> bits;

  SlicedCounters(std::size_t n, std::size_t max_count)
      : planes(std::max<std::size_t>(1, std::bit_width(max_count))), bits(n * planes, 0) {}

  void add(std::size_t node, std::uint64_t x) {
    std::uint64_t* p = bits.data() + node * planes;
    for (std::size_t k = 0; k < planes && x; ++k) {
      const std::uint64_t carry = p[k] & x;
      p[k] ^= x;
      x = carry;
    }
  }

  // Sum over lanes of count^2.
  std::uint64_t sum_sq(std::size_t node, std::size_t lanes) const {
    const std::uint64_t* p = bits.data() + node * planes;
    std::uint64_t total = 0;
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      std::uint64_t c = 0;
      for (std::size_t k = 0; k < planes; ++k) c |= ((p[k] >> lane) & 1U) << k;
      total += c * c;
    }
    return total;
  }
};

struct BlockTotals {
  std::vector<std::uint64_t> ones, toggles, ones_sq, toggles_sq;
};

}  // namespace

SimStats simulate(const CircuitGraph& g, const Workload& w, const SimConfig& cfg) {
  if (cfg.n_patterns < 1 || cfg.n_cycles < 2) {
    throw std::invalid_argument("simulate: need n_patterns >= 1 and n_cycles >= 2");
  }
  require_valid(g);
  const auto chains = detail::chains_for(g, w);
  const auto order = detail::combinational_order(g);
  const std::size_t n = g.size();
  const std::size_t n_ff = g.ffs().size();
  const std::size_t n_blocks = (cfg.n_patterns + detail::kLanes - 1) / detail::kLanes;

  SimStats stats;
  stats.n_patterns = cfg.n_patterns;
  stats.n_cycles = cfg.n_cycles;
  stats.traces.assign(n_ff, StateTrace(cfg.n_patterns, cfg.n_cycles));
  std::vector<BlockTotals> totals(n_blocks);

  detail::parallel_blocks(n_blocks, cfg.workers, [&](std::size_t block) {
    const std::size_t first = block * detail::kLanes;
    const std::size_t lanes = std::min(detail::kLanes, cfg.n_patterns - first);
    const std::uint64_t mask = detail::lane_mask(lanes);
    std::vector<std::uint64_t> stim;
    detail::draw_block_stimulus(g, chains, w, cfg.seed, first, lanes, cfg.n_cycles, stim);

    std::vector<std::uint64_t> vals(n, 0), prev(n, 0), state(n_ff, 0);
    for (std::size_t i = 0; i < n_ff; ++i) state[i] = g.ff_init(g.ffs()[i]) ? mask : 0;
    SlicedCounters ones(n, cfg.n_cycles), toggles(n, cfg.n_cycles);
    BlockTotals& bt = totals[block];
    bt.ones.assign(n, 0);
    bt.toggles.assign(n, 0);
    const std::size_t n_pi = g.pis().size();

    for (std::size_t t = 0; t < cfg.n_cycles; ++t) {
      detail::eval_cycle(g, order, {stim.data() + t * n_pi, n_pi}, state, vals);
      for (std::size_t v = 0; v < n; ++v) {
        const std::uint64_t x = vals[v] & mask;
        bt.ones[v] += static_cast<std::uint64_t>(std::popcount(x));
        ones.add(v, x);
        if (t > 0) {
          const std::uint64_t d = (vals[v] ^ prev[v]) & mask;
          bt.toggles[v] += static_cast<std::uint64_t>(std::popcount(d));
          toggles.add(v, d);
        }
      }
      for (std::size_t i = 0; i < n_ff; ++i) {
        std::uint64_t bits = state[i] & mask;
        StateTrace& tr = stats.traces[i];
        while (bits) {
          const int lane = std::countr_zero(bits);
          bits &= bits - 1;
          tr.set(first + static_cast<std::size_t>(lane), t, true);
        }
      }
      for (std::size_t i = 0; i < n_ff; ++i) state[i] = vals[g.fanins(g.ffs()[i])[0]];
      prev.swap(vals);
    }
    bt.ones_sq.resize(n);
    bt.toggles_sq.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      bt.ones_sq[v] = ones.sum_sq(v, lanes);
      bt.toggles_sq[v] = toggles.sum_sq(v, lanes);
    }
  });

  stats.p1.assign(n, 0.0);
  stats.ptr.assign(n, 0.0);
  stats.p1_sq.assign(n, 0.0);
  stats.ptr_sq.assign(n, 0.0);
  const double evals = static_cast<double>(cfg.n_patterns) * static_cast<double>(cfg.n_cycles);
  const double pairs = static_cast<double>(cfg.n_patterns) * static_cast<double>(cfg.n_cycles - 1);
  const double c = static_cast<double>(cfg.n_cycles);
  const double c1 = static_cast<double>(cfg.n_cycles - 1);
  for (std::size_t v = 0; v < n; ++v) {
    std::uint64_t ones = 0, tog = 0, ones_sq = 0, tog_sq = 0;
    for (const auto& bt : totals) {
      ones += bt.ones[v];
      tog += bt.toggles[v];
      ones_sq += bt.ones_sq[v];
      tog_sq += bt.toggles_sq[v];
    }
    stats.p1[v] = static_cast<double>(ones) / evals;
    stats.ptr[v] = static_cast<double>(tog) / pairs;
    stats.p1_sq[v] = static_cast<double>(ones_sq) / (c * c);
    stats.ptr_sq[v] = static_cast<double>(tog_sq) / (c1 * c1);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// exhaustive_stats
// ---------------------------------------------------------------------------

SimStats exhaustive_stats(const CircuitGraph& g, const Workload& w, std::size_t n_cycles) {
  require_valid(g);
  if (n_cycles < 2) throw std::invalid_argument("exhaustive_stats: n_cycles must be >= 2");
  const auto chains = detail::chains_for(g, w);
  std::vector<std::size_t> free_pis;  // indices into g.pis()
  for (std::size_t i = 0; i < g.pis().size(); ++i) {
    if (!(g.const_false() && *g.const_false() == g.pis()[i])) free_pis.push_back(i);
  }
  const std::size_t nx = free_pis.size();
  const std::size_t ns = g.ffs().size();
  if (nx > kExhaustiveMaxPis || ns > kExhaustiveMaxFfs) {
    throw std::invalid_argument("exhaustive_stats: limited to " + std::to_string(kExhaustiveMaxPis) +
                                " PIs and " + std::to_string(kExhaustiveMaxFfs) + " FFs");
  }
  const std::size_t n = g.size();
  const std::size_t nxs = std::size_t{1} << nx;
  const std::size_t nss = std::size_t{1} << ns;
  const std::size_t words = std::max<std::size_t>(1, nxs / 64);
  const auto order = detail::combinational_order(g);

  // Truth tables over x for every FF state s: tt[(s * n + v) * words + k].
  std::vector<std::uint64_t> tt(nss * n * words, 0);
  {
    std::vector<std::uint64_t> vals(n * words);
    for (std::size_t s = 0; s < nss; ++s) {
      std::fill(vals.begin(), vals.end(), 0);
      for (std::size_t j = 0; j < nx; ++j) {
        const NodeId pi = g.pis()[free_pis[j]];
        for (std::size_t x = 0; x < nxs; ++x) {
          if ((x >> j) & 1U) vals[pi * words + x / 64] |= std::uint64_t{1} << (x % 64);
        }
      }
      for (std::size_t i = 0; i < ns; ++i) {
        const std::uint64_t fill = ((s >> i) & 1U) ? ~std::uint64_t{0} : 0;
        for (std::size_t k = 0; k < words; ++k) vals[g.ffs()[i] * words + k] = fill;
      }
      for (NodeId v : order) {
        const auto fi = g.fanins(v);
        for (std::size_t k = 0; k < words; ++k) {
          vals[v * words + k] = g.kind(v) == NodeKind::AND
                                    ? vals[fi[0] * words + k] & vals[fi[1] * words + k]
                                    : ~vals[fi[0] * words + k];
        }
      }
      std::copy(vals.begin(), vals.end(), tt.begin() + static_cast<std::ptrdiff_t>(s * n * words));
    }
  }
  auto value = [&](std::size_t s, NodeId v, std::size_t x) -> bool {
    return (tt[(s * n + v) * words + x / 64] >> (x % 64)) & 1U;
  };

  const std::size_t n_states = nxs * nss;
  std::vector<std::uint32_t> next_state(n_states);
  for (std::size_t s = 0; s < nss; ++s) {
    for (std::size_t x = 0; x < nxs; ++x) {
      std::uint32_t s2 = 0;
      for (std::size_t i = 0; i < ns; ++i) {
        if (value(s, g.fanins(g.ffs()[i])[0], x)) s2 |= 1U << i;
      }
      next_state[s * nxs + x] = s2;
    }
  }

  // Forward push of a distribution over x through every PI chain.
  auto push = [&](double* f) {
    for (std::size_t j = 0; j < nx; ++j) {
      const double a = chains[free_pis[j]].rise, b = chains[free_pis[j]].fall;
      const std::size_t bit = std::size_t{1} << j;
      for (std::size_t x = 0; x < nxs; ++x) {
        if (x & bit) continue;
        const double f0 = f[x], f1 = f[x | bit];
        f[x] = f0 * (1.0 - a) + f1 * b;
        f[x | bit] = f0 * a + f1 * (1.0 - b);
      }
    }
  };
  // Conditional expectation E[f(x') | x] through every PI chain.
  auto pull = [&](double* f) {
    for (std::size_t j = 0; j < nx; ++j) {
      const double a = chains[free_pis[j]].rise, b = chains[free_pis[j]].fall;
      const std::size_t bit = std::size_t{1} << j;
      for (std::size_t x = 0; x < nxs; ++x) {
        if (x & bit) continue;
        const double f0 = f[x], f1 = f[x | bit];
        f[x] = (1.0 - a) * f0 + a * f1;
        f[x | bit] = b * f0 + (1.0 - b) * f1;
      }
    }
  };

  // pi[s * nxs + x]; start from reset state with stationary PIs.
  std::vector<double> dist(n_states, 0.0), occupancy_all(n_states, 0.0), occupancy_pairs(n_states, 0.0);
  std::size_t reset = 0;
  for (std::size_t i = 0; i < ns; ++i) {
    if (g.ff_init(g.ffs()[i])) reset |= std::size_t{1} << i;
  }
  for (std::size_t x = 0; x < nxs; ++x) {
    double p = 1.0;
    for (std::size_t j = 0; j < nx; ++j) {
      const double p1 = w.pis[free_pis[j]].p1;
      p *= ((x >> j) & 1U) ? p1 : 1.0 - p1;
    }
    dist[reset * nxs + x] = p;
  }
  std::vector<double> next(n_states);
  for (std::size_t t = 0; t < n_cycles; ++t) {
    for (std::size_t k = 0; k < n_states; ++k) occupancy_all[k] += dist[k];
    if (t + 1 == n_cycles) break;
    for (std::size_t k = 0; k < n_states; ++k) occupancy_pairs[k] += dist[k];
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t k = 0; k < n_states; ++k) {
      if (dist[k] != 0.0) next[next_state[k] * nxs + (k % nxs)] += dist[k];
    }
    for (std::size_t s = 0; s < nss; ++s) push(next.data() + s * nxs);
    dist.swap(next);
  }

  SimStats stats;
  stats.n_patterns = 0;
  stats.n_cycles = n_cycles;
  stats.p1.assign(n, 0.0);
  stats.ptr.assign(n, 0.0);
  for (std::size_t s = 0; s < nss; ++s) {
    for (std::size_t x = 0; x < nxs; ++x) {
      const double occ = occupancy_all[s * nxs + x];
      if (occ == 0.0) continue;
      for (NodeId v = 0; v < n; ++v) {
        if (value(s, v, x)) stats.p1[v] += occ;
      }
    }
  }

  // Transitions: group source states by their successor FF state s2, then
  // E[change] = sum occ(x,s) * P(v(x', s2) != v(x, s)).
  std::vector<std::vector<std::uint32_t>> by_next(nss);
  for (std::size_t k = 0; k < n_states; ++k) {
    if (occupancy_pairs[k] != 0.0) by_next[next_state[k]].push_back(static_cast<std::uint32_t>(k));
  }
  std::vector<double> expect(nxs);
  for (std::size_t s2 = 0; s2 < nss; ++s2) {
    if (by_next[s2].empty()) continue;
    for (NodeId v = 0; v < n; ++v) {
      for (std::size_t x = 0; x < nxs; ++x) expect[x] = value(s2, v, x) ? 1.0 : 0.0;
      pull(expect.data());
      double acc = 0.0;
      for (std::uint32_t k : by_next[s2]) {
        const std::size_t x = k % nxs, s = k / nxs;
        const double g1 = expect[x];
        acc += occupancy_pairs[k] * (value(s, v, x) ? 1.0 - g1 : g1);
      }
      stats.ptr[v] += acc;
    }
  }
  for (NodeId v = 0; v < n; ++v) {
    stats.p1[v] /= static_cast<double>(n_cycles);
    stats.ptr[v] /= static_cast<double>(n_cycles - 1);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string SimStats::to_json(const CircuitGraph& g) const {
  nlohmann::ordered_json j;
  j["n_patterns"] = n_patterns;
  j["n_cycles"] = n_cycles;
  auto nodes = nlohmann::ordered_json::array();
  for (NodeId v = 0; v < p1.size(); ++v) {
    nlohmann::ordered_json e;
    e["id"] = v;
    if (v < g.size() && g.has_name(v)) e["name"] = g.name(v);
    e["kind"] = std::string(to_string(g.kind(v)));
    e["p1"] = p1[v];
    e["ptr"] = ptr[v];
    nodes.push_back(std::move(e));
  }
  j["nodes"] = std::move(nodes);
  return j.dump(2);
}

namespace {
constexpr char kTraceMagic[8] = {'D', 'S', 'Q', 'T', 'R', 'A', 'C', 'E'};
constexpr std::uint32_t kTraceVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
std::uint64_t get_le(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw std::runtime_error("trace file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void write_traces(const std::filesystem::path& path, const std::vector<StateTrace>& traces) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kTraceMagic, 8);
  put_u32(os, kTraceVersion);
  put_u32(os, static_cast<std::uint32_t>(traces.size()));
  put_u32(os, static_cast<std::uint32_t>(traces.empty() ? 0 : traces[0].n_patterns()));
  put_u32(os, static_cast<std::uint32_t>(traces.empty() ? 0 : traces[0].n_cycles()));
  for (const auto& t : traces) {
    for (std::uint64_t word : t.words()) put_u64(os, word);
  }
}

std::vector<StateTrace> read_traces(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kTraceMagic, 8) != 0) throw std::runtime_error("not a trace file");
  if (get_le(is, 4) != kTraceVersion) throw std::runtime_error("unsupported trace version");
  const auto n_ff = get_le(is, 4), n_patterns = get_le(is, 4), n_cycles = get_le(is, 4);
  std::vector<StateTrace> traces;
  for (std::uint64_t i = 0; i < n_ff; ++i) {
    StateTrace t(n_patterns, n_cycles);
    for (auto& word : t.words()) word = get_le(is, 8);
    traces.push_back(std::move(t));
  }
  return traces;
}

}  // namespace dseq
