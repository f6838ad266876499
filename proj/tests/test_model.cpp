#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "deepseq/model.hpp"
#include "helpers.hpp"
#include "learn_helpers.hpp"

using namespace dseq;
using namespace dseq::nn;
using testutil::make_sample;
using testutil::small_model;

namespace {

bool same(const Var& a, const Var& b) { return a.value() == b.value(); }

double dot(const Var& a, const Var& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.value().size(); ++k) s += double(a.value().data[k]) * b.value().data[k];
  return s;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("source structure embeddings are orthonormal; PI function/sequence carry the workload") {
  for (std::size_t dim : {8, 32, 128}) {
    const auto g = testutil::random_circuit(dim, 6, 40, 15, std::min<std::size_t>(dim - 6, 20));
    Rng rng(1);
    const auto w = Workload::random(g, rng);
    const auto e = init_embeddings(g, w, dim, 3);
    std::vector<NodeId> src;
    for (NodeId v = 0; v < g.size(); ++v) {
      if (g.is_source(v)) src.push_back(v);
    }
    REQUIRE(src.size() <= dim);
    for (NodeId i : src) {
      for (NodeId j : src) CHECK(std::abs(dot(e.hs[i], e.hs[j]) - (i == j ? 1.0 : 0.0)) < 1e-5);
    }
    for (NodeId v : g.pis()) {
      CHECK(e.hf[v].value().data[0] == Real(w.pis[g.pi_index(v)].p1));
      CHECK(e.hseq[v].value().data[0] == Real(w.pis[g.pi_index(v)].ptr));
    }
    for (NodeId v = 0; v < g.size(); ++v) {
      CHECK(e.hs[v].cols() == dim);
      CHECK(std::abs(dot(e.hs[v], e.hs[v]) - 1) < 1e-5);
    }
    CHECK(init_embeddings(g, w, dim, 3).values(e.hs) == e.values(e.hs));
  }
  // More sources than dimensions: unit vectors, no orthogonality promise.
  const auto g = testutil::random_circuit(1, 6, 30, 10, 6);
  const auto e = init_embeddings(g, Workload::uniform(g), 4, 0);
  for (NodeId v : g.pis()) CHECK(std::abs(dot(e.hs[v], e.hs[v]) - 1) < 1e-5);
}

TEST_CASE("acyclic plans update every node exactly once per direction; repeated calls are identical") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = testutil::random_circuit(seed, 4, 30, 12, 4, 0.0);
    const auto plan = levelize(g);
    REQUIRE(plan.cyclic_regions.empty());
    const Model m(small_model(8, seed));
    const auto init = init_embeddings(g, Workload::uniform(g), 8, seed);
    ForwardDiagnostics d;
    const auto a = forward(g, plan, m, init, &d);
    for (NodeId v = 0; v < g.size(); ++v) {
      CHECK(d.forward_updates[v] == (g.fanins(v).empty() ? 0 : 1));
      const bool updatable = g.kind(v) != NodeKind::PI && !g.fanouts(v).empty();
      CHECK(d.reverse_updates[v] == (updatable ? 1 : 0));
    }
    const auto b = forward(g, plan, m, init);
    CHECK(a.values(a.hs) == b.values(b.hs));
    CHECK(a.values(a.hf) == b.values(b.hf));
    CHECK(a.values(a.hseq) == b.values(b.hseq));
  }
}

TEST_CASE("cyclic regions are re-swept at most cycle_max_iters times") {
  const auto g = testutil::toggle_ff();
  const auto plan = levelize(g);
  const auto init = init_embeddings(g, Workload::uniform(g), 8, 0);
  for (int max_iters : {0, 1, 3, 5}) {
    auto cfg = small_model();
    cfg.cycle_max_iters = max_iters;
    cfg.cycle_tol = 0;
    ForwardDiagnostics d;
    forward(g, plan, Model(cfg), init, &d);
    REQUIRE(d.regions.size() == 1);
    CHECK(d.regions[0].iterations == max_iters);
    CHECK(d.regions[0].residuals.size() == static_cast<std::size_t>(max_iters));
    for (NodeId v : plan.cyclic_regions[0].nodes) CHECK(d.forward_updates[v] == 1 + max_iters);
  }
  auto loose = small_model();
  loose.cycle_tol = 1e9;
  ForwardDiagnostics d;
  forward(g, plan, Model(loose), init, &d);
  CHECK(d.regions[0].iterations == 1);
  CHECK(d.regions[0].converged);
  CHECK(d.to_json().at("regions").size() == 1);
}

TEST_CASE("sources are never rewritten by forward") {
  const auto g = testutil::ten_nodes();
  const auto plan = levelize(g);
  const Model m(small_model());
  Rng rng(2);
  const auto init = init_embeddings(g, Workload::random(g, rng), 8, 5);
  const auto e = forward(g, plan, m, init);
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.is_source(v)) CHECK(same(e.hs[v], init.hs[v]));
    if (g.kind(v) == NodeKind::PI) {
      CHECK(same(e.hf[v], init.hf[v]));
      CHECK(same(e.hseq[v], init.hseq[v]));
    } else {
      CHECK_FALSE(same(e.hf[v], init.hf[v]));
    }
  }
}

TEST_CASE("pass-through GRUs leave embeddings at their initial values") {
  const auto g = testutil::ten_nodes();
  Model m(small_model());
  for (const auto& n : m.params().names()) {
    if (n.ends_with(".bi_z")) {
      for (auto& x : m.params().at(n).mutable_value().data) x = 60;
    }
  }
  const auto init = init_embeddings(g, Workload::uniform(g), 8, 0);
  const auto e = forward(g, levelize(g), m, init);
  for (NodeId v = 0; v < g.size(); ++v) {
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(e.hs[v].value().data[k] == doctest::Approx(init.hs[v].value().data[k]).epsilon(1e-6));
      CHECK(e.hf[v].value().data[k] == doctest::Approx(init.hf[v].value().data[k]).epsilon(1e-6));
    }
  }
}

TEST_CASE("heads map to the unit interval and the cosine heads follow their closed forms") {
  const auto g = testutil::ten_nodes();
  auto s = make_sample(g, 3);
  s.labels.f = {{*g.find("a") + 3, *g.find("a") + 4, 0.5}};
  s.labels.ffsim = {{*g.find("q"), *g.find("p"), 0.5}};
  const Model m(small_model());
  const auto e = forward(g, *s.plan, m, init_embeddings(g, s.workload, 8, 1));
  const auto p = predict_heads(g, e, m, s.labels);
  CHECK(p.nodes == supervised_nodes(g));
  CHECK(p.lg.rows() == p.nodes.size());
  for (Real x : p.lg.value().data) CHECK((x >= 0 && x <= 1));
  for (Real x : p.tr.value().data) CHECK((x >= 0 && x <= 1));
  CHECK(p.rc_logits.rows() == s.labels.rc.size());
  auto cosine = [&](const Var& a, const Var& b) {
    return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
  };
  const auto& f = s.labels.f[0];
  CHECK(p.f.value().data[0] == doctest::Approx((1 - cosine(e.hf[f.i], e.hf[f.j])) / 2).epsilon(1e-5));
  const auto& q = s.labels.ffsim[0];
  CHECK(p.ffsim.value().data[0] == doctest::Approx((1 + cosine(e.hseq[q.i], e.hseq[q.j])) / 2).epsilon(1e-5));
}

TEST_CASE("loss: L1 terms, weights, exclusions and label checks") {
  const auto g = testutil::ten_nodes();
  auto s = make_sample(g, 4);
  s.labels.ffsim = {{*g.find("q"), *g.find("p"), 0.25}};
  s.labels.f = {{3, 4, 0.75}};
  const Model m(small_model());
  const auto e = forward(g, *s.plan, m, init_embeddings(g, s.workload, 8, 1));
  const auto p = predict_heads(g, e, m, s.labels);

  const auto r = compute_loss(p, s.labels, {});
  double lg = 0;
  for (std::size_t k = 0; k < p.nodes.size(); ++k) lg += std::abs(p.lg.value().data[k] - s.labels.p1[p.nodes[k]]);
  CHECK(r.loss.lg == doctest::Approx(lg / p.nodes.size()).epsilon(1e-5));
  CHECK(r.avg_pe.lg == r.loss.lg);
  CHECK(r.loss.ffsim == doctest::Approx(std::abs(p.ffsim.value().data[0] - 0.25)).epsilon(1e-5));
  CHECK(r.total.item() ==
        doctest::Approx(r.loss.rc + r.loss.lg + r.loss.tr + r.loss.f + r.loss.ffsim).epsilon(1e-5));

  LossWeights w{2, 0, 1, 0.5, 0};
  const auto rw = compute_loss(p, s.labels, w);
  CHECK(rw.total.item() == doctest::Approx(2 * r.loss.rc + r.loss.tr + 0.5 * r.loss.f).epsilon(1e-5));

  LabelSet empty = s.labels;
  empty.rc.clear();
  empty.f.clear();
  empty.ffsim.clear();
  const auto pe = predict_heads(g, e, m, empty);
  CHECK(compute_loss(pe, empty, {}).total.item() == doctest::Approx(r.loss.lg + r.loss.tr).epsilon(1e-5));
  CHECK(compute_loss(pe, empty, {}).counts.ffsim == 0);

  LabelSet bad = s.labels;
  bad.f[0].distance = 1.5;
  CHECK_THROWS_AS(compute_loss(p, bad, {}), std::invalid_argument);
  bad = s.labels;
  bad.p1[5] = -0.1;
  CHECK_THROWS_AS(compute_loss(p, bad, {}), std::invalid_argument);
}

TEST_CASE("with a zero FFsim weight the FFsim labels have no influence") {
  const auto g = testutil::ten_nodes();
  auto s = make_sample(g, 5);
  s.labels.ffsim = {{*g.find("q"), *g.find("p"), 0.1}};
  auto s2 = s;
  s2.labels.ffsim[0].sim = 0.9;
  auto grads = [&](const Sample& x) {
    Model m(small_model());
    const auto e = forward(g, *x.plan, m, init_embeddings(g, x.workload, 8, 1));
    backward(compute_loss(predict_heads(g, e, m, x.labels), x.labels, {1, 1, 1, 1, 0}).total);
    std::vector<Matrix> out;
    for (const auto& n : m.params().names()) out.push_back(m.params().at(n).grad());
    return out;
  };
  CHECK(grads(s) == grads(s2));
}

TEST_CASE("training: phases, determinism and frozen sources") {
  std::vector<Sample> data;
  for (std::uint64_t k = 0; k < 3; ++k) data.push_back(make_sample(testutil::random_circuit(k, 3, 14, 6, 3), k));
  TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs_phase1 = 3;
  tc.epochs_phase2 = 2;
  tc.lr = 1e-3;
  tc.seed = 4;

  Model a(small_model(8, 2)), b(small_model(8, 2));
  std::vector<EpochRecord> seen;
  const auto ha = train(data, a, tc, [&](const EpochRecord& r) { seen.push_back(r); });
  const auto hb = train(data, b, tc);
  CHECK(a.params().same_values(b.params()));
  REQUIRE(ha.size() == 5);
  CHECK(seen.size() == 5);
  for (const auto& r : ha) {
    CHECK(r.phase == (r.epoch <= 3 ? 1 : 2));
    if (r.phase == 1) CHECK(r.weighted_loss.ffsim == 0);
    CHECK(r.total == hb[r.epoch - 1].total);
  }
  bool any_ffsim = false;
  for (const auto& s : data) any_ffsim = any_ffsim || !s.labels.ffsim.empty();
  if (any_ffsim) CHECK(ha.back().weighted_loss.ffsim > 0);
  CHECK_FALSE(a.params().same_values(Model(small_model(8, 2)).params()));

  // Phase 1 ignores FFsim labels entirely.
  auto altered = data;
  for (auto& s : altered) {
    for (auto& p : s.labels.ffsim) p.sim = 1 - p.sim;
  }
  TrainConfig p1 = tc;
  p1.epochs_phase2 = 0;
  Model c(small_model(8, 2)), d(small_model(8, 2));
  train(data, c, p1);
  train(altered, d, p1);
  CHECK(c.params().same_values(d.params()));

  // Sources keep their initial embeddings after training.
  for (const auto& s : data) {
    const auto init = init_embeddings(*s.graph, s.workload, 8, a.config().seed);
    const auto e = forward(*s.graph, *s.plan, a, init);
    for (NodeId v = 0; v < s.graph->size(); ++v) {
      if (s.graph->is_source(v)) CHECK(same(e.hs[v], init.hs[v]));
      if (s.graph->kind(v) == NodeKind::PI) CHECK(same(e.hseq[v], init.hseq[v]));
    }
  }
  CHECK_THROWS_AS(train({}, a, tc), std::invalid_argument);
}

TEST_CASE("evaluation pools by label count") {
  std::vector<Sample> data;
  for (std::uint64_t k = 0; k < 2; ++k) data.push_back(make_sample(testutil::random_circuit(k + 10, 3, 10 + 8 * k, 5, 2), k));
  const Model m(small_model());
  const auto rep = evaluate(m, data);
  REQUIRE(rep.circuits.size() == 2);
  const auto& c0 = rep.circuits[0];
  const auto& c1 = rep.circuits[1];
  CHECK(rep.pooled.lg == doctest::Approx((c0.avg_pe.lg * c0.counts.lg + c1.avg_pe.lg * c1.counts.lg) /
                                         double(c0.counts.lg + c1.counts.lg)));
  CHECK(rep.to_json().at("avg_pe").size() == 5);
}

TEST_CASE("model checkpoints reproduce the forward pass") {
  const auto dir = std::filesystem::temp_directory_path() / "dseq_test_model";
  std::filesystem::create_directories(dir);
  auto cfg = small_model(8, 9);
  cfg.reverse_layer = false;
  Model m(cfg);
  m.add_reliability_head();
  m.save(dir / "m.ckpt", {{"k", 1}});
  const Model back = Model::load(dir / "m.ckpt");
  CHECK(back.config().reverse_layer == false);
  CHECK(back.has_reliability_head());
  CHECK(back.params().size() == m.params().size());
  for (const auto& n : m.params().names()) {
    const auto& x = m.params().at(n).value().data;
    const auto& y = back.params().at(n).value().data;
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(y[k] == Real(float(x[k])));
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
