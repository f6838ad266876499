#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "deepseq/netlist_io.hpp"
#include "deepseq/simulate.hpp"
#include "helpers.hpp"

using namespace dseq;
using doctest::Approx;

namespace {

// Pattern-at-a-time reference simulator. It draws the PI chains from the
// same per-pattern streams as simulate() but evaluates every node by
// recursion, one pattern and one cycle at a time.
SimStats scalar_simulate(const CircuitGraph& g, const Workload& w, const SimConfig& cfg) {
  const std::size_t n = g.size();
  const auto& pis = g.pis();
  const auto& ffs = g.ffs();
  std::vector<MarkovParams> chains;
  std::vector<double> p1;
  for (std::size_t i = 0; i < pis.size(); ++i) {
    const bool is_const = g.const_false() && *g.const_false() == pis[i];
    p1.push_back(is_const ? 0.0 : w.pis[i].p1);
    chains.push_back(is_const ? MarkovParams{0, 0} : markov_params(w.pis[i].p1, w.pis[i].ptr));
  }
  SimStats s;
  s.n_patterns = cfg.n_patterns;
  s.n_cycles = cfg.n_cycles;
  s.traces.assign(ffs.size(), StateTrace(cfg.n_patterns, cfg.n_cycles));
  std::vector<std::uint64_t> ones(n, 0), tog(n, 0), ones_sq(n, 0), tog_sq(n, 0);
  for (std::size_t k = 0; k < cfg.n_patterns; ++k) {
    Rng rng(stream_key(cfg.seed, k));
    std::vector<int> src(n, 0), prev;
    std::vector<int> pi_bit(pis.size(), 0);
    for (std::size_t i = 0; i < ffs.size(); ++i) src[ffs[i]] = g.ff_init(ffs[i]);
    std::vector<std::uint64_t> o(n, 0), t(n, 0);
    for (std::size_t c = 0; c < cfg.n_cycles; ++c) {
      for (std::size_t i = 0; i < pis.size(); ++i) {
        const double u = rng.uniform();
        if (c == 0) {
          pi_bit[i] = u < p1[i];
        } else if (pi_bit[i]) {
          pi_bit[i] = !(u < chains[i].fall);
        } else {
          pi_bit[i] = u < chains[i].rise;
        }
        src[pis[i]] = pi_bit[i];
      }
      const auto val = testutil::eval_recursive(g, src);
      for (std::size_t i = 0; i < ffs.size(); ++i) s.traces[i].set(k, c, val[ffs[i]]);
      for (NodeId v = 0; v < n; ++v) {
        o[v] += val[v];
        if (c > 0) t[v] += val[v] != prev[v];
      }
      for (NodeId v : ffs) src[v] = val[g.fanins(v)[0]];
      prev = val;
    }
    for (NodeId v = 0; v < n; ++v) {
      ones[v] += o[v];
      tog[v] += t[v];
      ones_sq[v] += o[v] * o[v];
      tog_sq[v] += t[v] * t[v];
    }
  }
  const double c = static_cast<double>(cfg.n_cycles), c1 = c - 1;
  const double np = static_cast<double>(cfg.n_patterns);
  for (NodeId v = 0; v < n; ++v) {
    s.p1.push_back(static_cast<double>(ones[v]) / (np * c));
    s.ptr.push_back(static_cast<double>(tog[v]) / (np * c1));
    s.p1_sq.push_back(static_cast<double>(ones_sq[v]) / (c * c));
    s.ptr_sq.push_back(static_cast<double>(tog_sq[v]) / (c1 * c1));
  }
  return s;
}

SimConfig config(std::size_t patterns, std::size_t cycles, std::uint64_t seed, unsigned workers = 1) {
  SimConfig c;
  c.n_patterns = patterns;
  c.n_cycles = cycles;
  c.seed = seed;
  c.workers = workers;
  return c;
}

}  // namespace

TEST_SUITE("simulate") {

TEST_CASE("markov_params solves stationarity and change rate") {
  auto m = markov_params(0.5, 0.5);
  CHECK(m.rise == Approx(0.5));
  CHECK(m.fall == Approx(0.5));
  m = markov_params(0.5, 1.0);
  CHECK(m.rise == Approx(1.0));
  CHECK(m.fall == Approx(1.0));
  m = markov_params(1.0, 0.0);
  CHECK(m.rise == 0.0);
  CHECK(m.fall == 0.0);
  CHECK_THROWS_AS(markov_params(0.2, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(markov_params(1.0, 0.1), std::invalid_argument);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double p1 = rng.uniform();
    const double ptr = rng.uniform() * 2 * std::min(p1, 1 - p1);
    m = markov_params(p1, ptr);
    CHECK(m.rise * (1 - p1) == Approx(m.fall * p1).epsilon(1e-12));
    CHECK(m.rise * (1 - p1) + m.fall * p1 == Approx(ptr).epsilon(1e-12));
  }
}

TEST_CASE("bit-parallel simulation equals a scalar reference simulator") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto g = testutil::random_circuit(seed, 3, 15, 6, 3);
    Rng rng(seed);
    const auto w = Workload::random(g, rng);
    for (std::size_t patterns : {1, 63, 64, 65, 130}) {
      const auto cfg = config(patterns, 17, seed * 11);
      CHECK(simulate(g, w, cfg) == scalar_simulate(g, w, cfg));
    }
  }
  // AIGER constant and reset-1 latches go through the same path.
  const auto g = parse_aiger("aag 3 1 1 1 1\n2\n4 7 1\n6\n6 2 1\n");
  const auto w = Workload::uniform(g, 0.3, 0.2);
  CHECK(simulate(g, w, config(70, 9, 3)) == scalar_simulate(g, w, config(70, 9, 3)));
}

TEST_CASE("results do not depend on the worker count or the number of other patterns") {
  const auto g = testutil::random_circuit(42, 5, 60, 20, 6);
  const auto w = Workload::uniform(g, 0.4, 0.3);
  const auto one = simulate(g, w, config(300, 40, 9, 1));
  CHECK(simulate(g, w, config(300, 40, 9, 4)) == one);
  CHECK(simulate(g, w, config(300, 40, 9, 7)) == one);
  const auto more = simulate(g, w, config(500, 40, 9, 3));
  for (std::size_t i = 0; i < g.ffs().size(); ++i) {
    for (std::size_t k = 0; k < 300; ++k) {
      for (std::size_t t = 0; t < 40; ++t) CHECK(one.traces[i].get(k, t) == more.traces[i].get(k, t));
    }
  }
  CHECK(simulate(g, w, config(300, 40, 10)).p1 != one.p1);
}

TEST_CASE("NOT over a PI with p1 = 0.3 and the complement law") {
  const auto g = testutil::not_chain(3);
  const auto s = simulate(g, Workload::uniform(g, 0.3, 0.3), SimConfig{});
  // Lag-one autocorrelation of the chain is 1 - rise - fall = 2/7, so the
  // variance of the mean is inflated by (1 + 2/7) / (1 - 2/7) = 1.8.
  CHECK(std::abs(s.p1[1] - 0.7) < 3 * std::sqrt(0.21 * 1.8 / 1e5));
  for (NodeId v = 1; v < g.size(); ++v) {
    // Exact on the underlying counts.
    CHECK(std::llround(s.p1[v] * 1e5) + std::llround(s.p1[v - 1] * 1e5) == 100000);
    CHECK(s.ptr[v] == s.ptr[v - 1]);
  }
  const auto r = testutil::random_circuit(3, 4, 40, 20, 4);
  const auto sr = simulate(r, Workload::uniform(r), config(200, 50, 1));
  for (NodeId v = 0; v < r.size(); ++v) {
    if (r.kind(v) != NodeKind::NOT) continue;
    const NodeId u = r.fanins(v)[0];
    CHECK(std::llround(sr.p1[v] * 1e4) + std::llround(sr.p1[u] * 1e4) == 10000);
    CHECK(sr.ptr[v] == sr.ptr[u]);
  }
}

TEST_CASE("AND of two fair i.i.d. PIs: p1 = 1/4 and ptr = 3/8 within 3 sigma") {
  CircuitBuilder b;
  const NodeId x = b.add_and(b.add_pi(), b.add_pi());
  b.add_po(x);
  const auto g = std::move(b).build();
  const auto s = simulate(g, Workload::uniform(g), SimConfig{});
  // Each cycle's output is an independent Bernoulli(1/4).
  CHECK(std::abs(s.p1[x] - 0.25) < 3 * std::sqrt(0.25 * 0.75 / 1e5));
  // Changes of consecutive pairs are dependent only at lag one; allow for it.
  CHECK(std::abs(s.ptr[x] - 0.375) < 3 * std::sqrt(2 * 0.375 * 0.625 / 99e3));
  const auto e = exhaustive_stats(g, Workload::uniform(g));
  CHECK(e.p1[x] == Approx(0.25).epsilon(1e-12));
  CHECK(e.ptr[x] == Approx(0.375).epsilon(1e-12));
}

TEST_CASE("toggle FF alternates 0,1,0,1 under any workload") {
  const auto g = testutil::toggle_ff();
  const NodeId q = *g.find("q");
  for (double p1 : {0.1, 0.5, 0.9}) {
    const auto s = simulate(g, Workload::uniform(g, p1, 0.1), config(100, 100, 2));
    CHECK(s.ptr[q] == 1.0);
    CHECK(s.p1[q] == 0.5);
    for (std::size_t k = 0; k < 100; ++k) {
      for (std::size_t t = 0; t < 100; ++t) CHECK(s.traces[0].get(k, t) == (t % 2 == 1));
    }
    const auto e = exhaustive_stats(g, Workload::uniform(g, p1, 0.1));
    CHECK(e.p1[q] == Approx(0.5).epsilon(1e-12));
    CHECK(e.ptr[q] == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("FF statistics agree with the stored traces") {
  const auto g = testutil::random_circuit(11, 4, 40, 15, 5);
  const auto s = simulate(g, Workload::uniform(g, 0.6, 0.5), config(150, 30, 4));
  for (std::size_t i = 0; i < g.ffs().size(); ++i) {
    std::size_t ones = 0, changes = 0;
    for (std::size_t k = 0; k < 150; ++k) {
      for (std::size_t t = 0; t < 30; ++t) {
        ones += s.traces[i].get(k, t);
        if (t > 0) changes += s.traces[i].get(k, t) != s.traces[i].get(k, t - 1);
      }
    }
    CHECK(s.p1[g.ffs()[i]] == static_cast<double>(ones) / (150.0 * 30));
    CHECK(s.ptr[g.ffs()[i]] == static_cast<double>(changes) / (150.0 * 29));
  }
}

TEST_CASE("stationary bound and ranges hold at the default configuration") {
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    const auto g = testutil::random_circuit(seed, 5, 50, 20, 5);
    Rng rng(seed);
    const auto s = simulate(g, Workload::random(g, rng), config(1000, 100, seed, 4));
    for (NodeId v = 0; v < g.size(); ++v) {
      CHECK(s.p1[v] >= 0.0);
      CHECK(s.p1[v] <= 1.0);
      CHECK(s.ptr[v] <= 2 * std::min(s.p1[v], 1 - s.p1[v]) + 0.02);
    }
  }
}

TEST_CASE("Monte Carlo estimates agree with the exact expectation") {
  for (std::uint64_t seed = 30; seed < 36; ++seed) {
    const auto g = testutil::random_circuit(seed, 4, 12, 5, 2);
    Rng rng(seed);
    const auto w = Workload::random(g, rng);
    const auto e = exhaustive_stats(g, w, 100);
    const auto s = simulate(g, w, config(1000, 100, seed));
    for (NodeId v = 0; v < g.size(); ++v) {
      // Cluster-robust standard error: patterns are the independent units.
      const double n = 1000;
      const double var_p1 = std::max(s.p1_sq[v] / n - s.p1[v] * s.p1[v], 0.0);
      const double var_ptr = std::max(s.ptr_sq[v] / n - s.ptr[v] * s.ptr[v], 0.0);
      const double se_p1 = std::max(std::sqrt(var_p1 / n), 1e-4);
      const double se_ptr = std::max(std::sqrt(var_ptr / n), 1e-4);
      CHECK(std::abs(s.p1[v] - e.p1[v]) < 5 * se_p1);
      CHECK(std::abs(s.ptr[v] - e.ptr[v]) < 5 * se_ptr);
    }
  }
}

TEST_CASE("exhaustive_stats enforces its limits") {
  const auto big = testutil::random_circuit(1, 13, 20, 5, 2);
  CHECK_THROWS_AS(exhaustive_stats(big, Workload::uniform(big)), std::invalid_argument);
  const auto many_ff = testutil::random_circuit(1, 2, 20, 5, 9);
  CHECK_THROWS_AS(exhaustive_stats(many_ff, Workload::uniform(many_ff)), std::invalid_argument);
}

TEST_CASE("bad inputs are rejected") {
  const auto g = testutil::pipeline();
  Workload short_w;
  short_w.pis.resize(1);
  CHECK_THROWS_AS(simulate(g, short_w, SimConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(simulate(g, Workload::uniform(g), config(10, 1, 0)), std::invalid_argument);
  CHECK_THROWS_AS(simulate(g, Workload::uniform(g, 0.1, 0.5), SimConfig{}), std::invalid_argument);
}

TEST_CASE("workload JSON and trace files round trip") {
  const auto g = testutil::random_circuit(8, 4, 20, 8, 3);
  Rng rng(1);
  const auto w = Workload::random(g, rng);
  const auto back = Workload::from_json(g, w.to_json(g));
  REQUIRE(back.pis.size() == w.pis.size());
  for (std::size_t i = 0; i < w.pis.size(); ++i) {
    CHECK(back.pis[i].p1 == w.pis[i].p1);
    CHECK(back.pis[i].ptr == w.pis[i].ptr);
  }
  const auto s = simulate(g, w, config(77, 70, 5));
  const auto path = std::filesystem::temp_directory_path() / "dseq_test_traces.bin";
  write_traces(path, s.traces);
  CHECK(read_traces(path) == s.traces);
  std::filesystem::remove(path);
  const auto j = nlohmann::json::parse(s.to_json(g));
  CHECK(j.is_object());
}

}  // TEST_SUITE
