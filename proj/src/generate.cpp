#include "deepseq/generate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "deepseq/graph_algo.hpp"

namespace dseq {
namespace {

constexpr double kCorpusMean = 214.35;
constexpr double kCorpusStd = 92.63;
// Most fanins come from a short window of recent nodes, which keeps
// generated circuits deep rather than bushy.
constexpr std::size_t kRecentWindow = 12;

class FfSupport {
 public:
  FfSupport(std::size_t n_ff) : words_((n_ff + 63) / 64) {}

  void push_empty() { bits_.resize(bits_.size() + words_, 0); }
  void push_single(std::size_t ff) {
    push_empty();
    if (words_) bits_[bits_.size() - words_ + ff / 64] |= 1ULL << (ff % 64);
  }
  void push_union(std::size_t a, std::size_t b) {
    push_empty();
    for (std::size_t w = 0; w < words_; ++w) {
      bits_[bits_.size() - words_ + w] = bits_[a * words_ + w] | bits_[b * words_ + w];
    }
  }
  void push_copy(std::size_t a) { push_union(a, a); }

  bool has(std::size_t node, std::size_t ff) const {
    return (bits_[node * words_ + ff / 64] >> (ff % 64)) & 1U;
  }
  // True when every FF in the node's support has index < limit.
  bool below(std::size_t node, std::size_t limit) const {
    for (std::size_t w = 0; w < words_; ++w) {
      std::uint64_t word = bits_[node * words_ + w];
      if (!word) continue;
      const std::size_t top = w * 64 + 63 - static_cast<std::size_t>(__builtin_clzll(word));
      if (top >= limit) return false;
    }
    return true;
  }

 private:
  std::size_t words_;
  std::vector<std::uint64_t> bits_;
};

}  // namespace

std::string GenSummary::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["counts"] = {{"pi", n_pi}, {"and", n_and}, {"not", n_not}, {"ff", n_ff}};
  j["cycles"] = {{"feedback_requested", feedback_requested},
                 {"feedback_wired", feedback_wired},
                 {"ffs_on_cycle", ffs_on_cycle}};
  j["not_shortfall"] = not_shortfall;
  return j.dump(2);
}

Generated generate(const GenSpec& spec) {
  if (spec.n_pi < 1) throw std::invalid_argument("generate: n_pi must be >= 1");
  if (!(spec.feedback_prob >= 0.0 && spec.feedback_prob <= 1.0)) {
    throw std::invalid_argument("generate: feedback_prob must lie in [0, 1]");
  }
  if (spec.n_and > 0 && spec.n_pi + spec.n_ff < 2) {
    throw std::invalid_argument("generate: AND gates need at least two sources");
  }

  Rng rng(spec.seed);
  CircuitBuilder b;
  FfSupport support(spec.n_ff);
  std::vector<bool> has_not;
  std::vector<NodeKind> kind;
  auto track = [&](NodeKind k) {
    has_not.push_back(false);
    kind.push_back(k);
  };

  for (std::size_t i = 0; i < spec.n_pi; ++i) {
    b.add_pi("pi" + std::to_string(i));
    support.push_empty();
    track(NodeKind::PI);
  }
  std::vector<NodeId> ffs;
  for (std::size_t i = 0; i < spec.n_ff; ++i) {
    ffs.push_back(b.add_ff("ff" + std::to_string(i)));
    support.push_single(i);
    track(NodeKind::FF);
  }

  std::vector<NodeKind> plan(spec.n_and, NodeKind::AND);
  plan.insert(plan.end(), spec.n_not, NodeKind::NOT);
  rng.shuffle(plan);

  auto pick = [&](std::size_t pool) -> NodeId {
    if (pool > kRecentWindow && rng.bernoulli(0.6)) {
      return static_cast<NodeId>(pool - 1 - rng.below(kRecentWindow));
    }
    return static_cast<NodeId>(rng.below(pool));
  };

  GenSummary summary;
  summary.seed = spec.seed;
  std::size_t deferred_nots = 0;
  auto place_not = [&]() -> bool {
    const std::size_t pool = b.size();
    for (int attempt = 0; attempt < 32; ++attempt) {
      NodeId x = pick(pool);
      if (kind[x] != NodeKind::NOT && !has_not[x]) {
        b.add_not(x);
        has_not[x] = true;
        support.push_copy(x);
        track(NodeKind::NOT);
        return true;
      }
    }
    std::vector<NodeId> legal;
    for (NodeId x = 0; x < pool; ++x) {
      if (kind[x] != NodeKind::NOT && !has_not[x]) legal.push_back(x);
    }
    if (legal.empty()) return false;
    NodeId x = legal[rng.below(legal.size())];
    b.add_not(x);
    has_not[x] = true;
    support.push_copy(x);
    track(NodeKind::NOT);
    return true;
  };

  for (NodeKind k : plan) {
    if (k == NodeKind::AND) {
      const std::size_t pool = b.size();
      NodeId a = pick(pool);
      NodeId c = pick(pool);
      while (c == a) c = static_cast<NodeId>(rng.below(pool));
      b.add_and(a, c);
      support.push_union(a, c);
      track(NodeKind::AND);
      // A fresh AND is a new legal NOT driver; retry anything deferred.
      while (deferred_nots > 0 && place_not()) --deferred_nots;
    } else if (!place_not()) {
      ++deferred_nots;
    }
  }
  summary.not_shortfall = deferred_nots;

  // Wire FF D inputs. Without feedback, FF i may only see FFs j < i, so the
  // FF dependency graph stays acyclic.
  const std::size_t n = b.size();
  std::vector<int> fanout_count(n, 0);
  for (NodeId v = 0; v < n; ++v) {
    for (NodeId u : b.fanins(v)) ++fanout_count[u];
  }
  for (std::size_t i = 0; i < ffs.size(); ++i) {
    std::vector<NodeId> candidates;
    const bool want_feedback = rng.bernoulli(spec.feedback_prob);
    if (want_feedback) {
      ++summary.feedback_requested;
      for (NodeId v = 0; v < n; ++v) {
        if ((kind[v] == NodeKind::AND || kind[v] == NodeKind::NOT) && support.has(v, i)) {
          candidates.push_back(v);
        }
      }
      if (!candidates.empty()) ++summary.feedback_wired;
    }
    if (candidates.empty()) {
      std::vector<NodeId> dangling;
      for (NodeId v = 0; v < n; ++v) {
        if (kind[v] != NodeKind::AND && kind[v] != NodeKind::NOT) continue;
        if (!support.below(v, i)) continue;
        candidates.push_back(v);
        if (fanout_count[v] == 0) dangling.push_back(v);
      }
      if (!dangling.empty() && rng.bernoulli(0.7)) candidates.swap(dangling);
    }
    if (candidates.empty()) {
      for (NodeId v = 0; v < spec.n_pi; ++v) candidates.push_back(v);
    }
    NodeId d = candidates[rng.below(candidates.size())];
    b.set_ff_input(ffs[i], d);
    ++fanout_count[d];
  }

  std::size_t n_po = 0;
  for (NodeId v = 0; v < n; ++v) {
    if ((kind[v] == NodeKind::AND || kind[v] == NodeKind::NOT) && fanout_count[v] == 0) {
      b.add_po(v);
      ++n_po;
    }
  }
  if (n_po == 0) b.add_po(static_cast<NodeId>(n - 1));

  Generated out{std::move(b).build(), summary};
  const CircuitGraph& g = out.graph;
  out.summary.n_pi = g.count(NodeKind::PI);
  out.summary.n_and = g.count(NodeKind::AND);
  out.summary.n_not = g.count(NodeKind::NOT);
  out.summary.n_ff = g.count(NodeKind::FF);
  const auto cyc = on_cycle(g);
  for (NodeId ff : g.ffs()) out.summary.ffs_on_cycle += cyc[ff] ? 1 : 0;
  return out;
}

GenSpec spec_for_size(std::size_t n, std::uint64_t seed, double feedback_prob) {
  GenSpec spec;
  spec.n_pi = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(0.08 * static_cast<double>(n))));
  spec.n_ff = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.10 * static_cast<double>(n))));
  spec.n_not = static_cast<std::size_t>(std::lround(0.30 * static_cast<double>(n)));
  if (n < spec.n_pi + spec.n_ff + spec.n_not + 1) throw std::invalid_argument("spec_for_size: too few nodes");
  spec.n_and = n - spec.n_pi - spec.n_ff - spec.n_not;
  spec.seed = seed;
  spec.feedback_prob = feedback_prob;
  return spec;
}

GenSpec corpus_like_spec(Rng& rng, double feedback_prob) {
  double total = kCorpusMean + kCorpusStd * rng.normal();
  total = std::clamp(total, 24.0, 700.0);
  const auto n = static_cast<std::size_t>(std::lround(total));
  return spec_for_size(n, rng.next(), feedback_prob);
}

}  // namespace dseq
