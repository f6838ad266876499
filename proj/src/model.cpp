#include "deepseq/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "deepseq/netlist_io.hpp"

namespace dseq::nn::inline DSEQ_PRECISION_NS {
namespace {

constexpr NodeKind kUpdateOrder[] = {NodeKind::AND, NodeKind::NOT, NodeKind::FF};

const char* kind_tag(NodeKind k) {
  switch (k) {
    case NodeKind::AND: return "and";
    case NodeKind::NOT: return "not";
    case NodeKind::FF: return "ff";
    case NodeKind::PI: break;
  }
  return "pi";
}

Var stack(const std::vector<Var>& space, std::span<const NodeId> ids) {
  if (ids.size() == 1) return space[ids[0]];
  std::vector<Var> rows;
  rows.reserve(ids.size());
  for (NodeId v : ids) rows.push_back(space[v]);
  return stack_rows(rows);
}

void assign(std::vector<Var>& space, std::span<const NodeId> ids, const Var& m) {
  if (ids.size() == 1) {
    space[ids[0]] = m;
    return;
  }
  for (std::size_t i = 0; i < ids.size(); ++i) space[ids[i]] = row(m, i);
}

Var unit_row(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0;
  while (norm < 1e-12) {
    norm = 0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  Matrix m(1, dim);
  for (std::size_t j = 0; j < dim; ++j) m.data[j] = static_cast<Real>(v[j] / norm);
  return Var::constant(std::move(m));
}

Var one_hot_scaled(std::size_t dim, double value) {
  Matrix m(1, dim);
  m.data[0] = static_cast<Real>(value);
  return Var::constant(std::move(m));
}

// Applies one update of every embedding space to a batch of same-kind nodes.
// Within a batch all nodes read the state from before the batch.
class Propagator {
 public:
  Propagator(const CircuitGraph& g, const Model& model, EmbeddingState& e, bool reverse)
      : g_(g), params_(model.params()), e_(e), reverse_(reverse), dir_(reverse ? "rev" : "fwd") {}

  std::span<const NodeId> preds(NodeId v) const { return reverse_ ? g_.fanouts(v) : g_.fanins(v); }

  // Runs the nodes of one level in kind order (AND, NOT, FF). Nodes without
  // predecessors and PIs are skipped.
  void run_level(std::span<const NodeId> level, std::vector<int>* counter) {
    for (NodeKind k : kUpdateOrder) {
      std::vector<NodeId> batch;
      for (NodeId v : level) {
        if (g_.kind(v) == k && !preds(v).empty()) batch.push_back(v);
      }
      if (batch.empty()) continue;
      update(k, batch);
      if (counter) {
        for (NodeId v : batch) ++(*counter)[v];
      }
    }
  }

 private:
  const Var& p(const std::string& name) const { return params_.at(name); }

  void update(NodeKind kind, const std::vector<NodeId>& nodes) {
    std::vector<NodeId> src;
    std::vector<std::uint32_t> seg;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (NodeId u : preds(nodes[i])) {
        src.push_back(u);
        seg.push_back(static_cast<std::uint32_t>(i));
      }
    }
    const std::string tag = kind_tag(kind);

    if (kind != NodeKind::FF) {
      const std::string pre = dir_ + ".s." + tag;
      Var q = stack(e_.hs, nodes);
      Var msg = attn_aggregate(q, stack(e_.hs, src), seg, p(pre + ".attn.w1"), p(pre + ".attn.w2"));
      assign(e_.hs, nodes, gru_cell(msg, q, params_, pre + ".gru"));
    }
    {
      const std::string pre = dir_ + ".f." + tag;
      Var hf = stack(e_.hf, nodes);
      Var q = concat_cols({stack(e_.hs, nodes), hf});
      Var k = concat_cols({stack(e_.hs, src), stack(e_.hf, src)});
      Var msg = attn_aggregate(q, k, seg, p(pre + ".attn.w1"), p(pre + ".attn.w2"));
      assign(e_.hf, nodes, gru_cell(msg, hf, params_, pre + ".gru"));
    }
    {
      const std::string pre = dir_ + ".q." + tag;
      Var hq = stack(e_.hseq, nodes);
      Var q = concat_cols({stack(e_.hs, nodes), stack(e_.hf, nodes), hq});
      Var k = concat_cols({stack(e_.hs, src), stack(e_.hf, src), stack(e_.hseq, src)});
      Var msg = attn_aggregate(q, k, seg, p(pre + ".attn.w1"), p(pre + ".attn.w2"));
      assign(e_.hseq, nodes, gru_cell(msg, hq, params_, pre + ".gru"));
    }
  }

  const CircuitGraph& g_;
  const ParamStore& params_;
  EmbeddingState& e_;
  bool reverse_;
  std::string dir_;
};

double relative_change(const Matrix& before, const Matrix& after) {
  double diff = 0, base = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double d = static_cast<double>(after.data[i]) - before.data[i];
    diff += d * d;
    base += static_cast<double>(before.data[i]) * before.data[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(base), 1e-12);
}

Matrix column(const std::vector<double>& v) {
  Matrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<Real>(v[i]);
  return m;
}

void check_labels(const std::vector<double>& v, const char* task) {
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::invalid_argument(std::string("label outside [0,1] in task ") + task);
    }
  }
}

double mean_abs(const Matrix& pred, const std::vector<double>& target) {
  double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) acc += std::abs(pred.data[i] - target[i]);
  return target.empty() ? 0.0 : acc / static_cast<double>(target.size());
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"dim", dim},
          {"mlp_hidden", mlp_hidden},
          {"reverse_layer", reverse_layer},
          {"cycle_tol", cycle_tol},
          {"cycle_max_iters", cycle_max_iters},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.reverse_layer = j.at("reverse_layer").get<bool>();
  c.cycle_tol = j.at("cycle_tol").get<double>();
  c.cycle_max_iters = j.at("cycle_max_iters").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Matrix EmbeddingState::values(const std::vector<Var>& space) const {
  if (space.empty()) return {};
  Matrix m(space.size(), space[0].cols());
  for (std::size_t i = 0; i < space.size(); ++i) {
    std::copy(space[i].value().data.begin(), space[i].value().data.end(), m.row(i).begin());
  }
  return m;
}

EmbeddingState init_embeddings(const CircuitGraph& g, const Workload& w, std::size_t dim,
                               std::uint64_t seed) {
  if (w.pis.size() != g.pis().size()) {
    throw std::invalid_argument("init_embeddings: workload does not cover the PIs");
  }
  if (dim == 0) throw std::invalid_argument("init_embeddings: dim must be positive");
  Rng rng(stream_key(seed, 0x1e3b));
  const std::size_t n = g.size();
  EmbeddingState e;
  e.hs.resize(n);
  e.hf.resize(n);
  e.hseq.resize(n);

  std::vector<NodeId> sources;
  for (NodeId v = 0; v < n; ++v) {
    if (g.is_source(v)) sources.push_back(v);
  }
  if (sources.size() <= dim) {
    // Gram-Schmidt on Gaussian draws, in double.
    std::vector<std::vector<double>> basis;
    while (basis.size() < sources.size()) {
      std::vector<double> v(dim);
      for (double& x : v) x = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) {
          const double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
          for (std::size_t j = 0; j < dim; ++j) v[j] -= d * b[j];
        }
      }
      const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm < 1e-6) continue;
      for (double& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
      Matrix m(1, dim);
      for (std::size_t j = 0; j < dim; ++j) m.data[j] = static_cast<Real>(basis[i][j]);
      e.hs[sources[i]] = Var::constant(std::move(m));
    }
  } else {
    for (NodeId v : sources) e.hs[v] = unit_row(rng, dim);
  }
  for (NodeId v = 0; v < n; ++v) {
    if (!g.is_source(v)) e.hs[v] = unit_row(rng, dim);
  }
  for (NodeId v = 0; v < n; ++v) {
    if (g.kind(v) == NodeKind::PI) {
      PiStimulus s = w.pis[static_cast<std::size_t>(g.pi_index(v))];
      if (g.const_false() == v) s = {0.0, 0.0};
      e.hf[v] = one_hot_scaled(dim, s.p1);
      e.hseq[v] = one_hot_scaled(dim, s.ptr);
    } else {
      e.hf[v] = unit_row(rng, dim);
      e.hseq[v] = unit_row(rng, dim);
    }
  }
  return e;
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  if (cfg_.dim == 0 || cfg_.mlp_hidden == 0) throw std::invalid_argument("model dims must be positive");
  if (cfg_.cycle_max_iters < 0) throw std::invalid_argument("cycle_max_iters must be >= 0");
  Rng rng(stream_key(cfg_.seed, 0x9a7a));
  const std::size_t d = cfg_.dim, h = cfg_.mlp_hidden;
  std::vector<std::string> dirs{"fwd"};
  if (cfg_.reverse_layer) dirs.push_back("rev");
  for (const auto& dir : dirs) {
    for (const char* k : {"and", "not"}) {
      const std::string pre = dir + ".s." + k;
      add_attention(params_, pre + ".attn", d, d, rng);
      add_gru(params_, pre + ".gru", d, d, rng);
    }
    for (const char* k : {"and", "not", "ff"}) {
      std::string pre = dir + ".f." + k;
      add_attention(params_, pre + ".attn", 2 * d, 2 * d, rng);
      add_gru(params_, pre + ".gru", 2 * d, d, rng);
      pre = dir + ".q." + k;
      add_attention(params_, pre + ".attn", 3 * d, 3 * d, rng);
      add_gru(params_, pre + ".gru", 3 * d, d, rng);
    }
  }
  add_mlp3(params_, "head.rc", 2 * d, h, 1, rng);
  add_mlp3(params_, "head.lg", d, h, 1, rng);
  add_mlp3(params_, "head.tr", d, h, 1, rng);
}

void Model::add_reliability_head() {
  if (has_reliability_head()) return;
  Rng rng(stream_key(cfg_.seed, 0x4e1));
  add_mlp3(params_, "head.rel", 3 * cfg_.dim, cfg_.mlp_hidden, 2, rng);
}

void Model::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json heads = {"rc", "lg", "tr"};
  if (has_reliability_head()) heads.push_back("rel");
  nlohmann::json meta = {{"model", cfg_.to_json()}, {"heads", heads}};
  if (!extra.is_null()) meta["extra"] = extra;
  save_checkpoint(path, params_, meta);
}

Model Model::load(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_metadata(path);
  Model m(ModelConfig::from_json(meta.at("model")));
  for (const auto& h : meta.at("heads")) {
    if (h == "rel") m.add_reliability_head();
  }
  load_checkpoint(path, m.params_);
  return m;
}

nlohmann::json ForwardDiagnostics::to_json() const {
  auto regions_json = nlohmann::json::array();
  for (const auto& r : regions) {
    regions_json.push_back({{"region", r.region},
                            {"iterations", r.iterations},
                            {"residuals", r.residuals},
                            {"converged", r.converged}});
  }
  return {{"forward_updates", forward_updates},
          {"reverse_updates", reverse_updates},
          {"regions", regions_json}};
}

EmbeddingState forward(const CircuitGraph& g, const PropagationPlan& plan, const Model& model,
                       const EmbeddingState& init, ForwardDiagnostics* diag) {
  if (init.size() != g.size() || plan.level_of.size() != g.size()) {
    throw std::invalid_argument("forward: plan or embeddings do not match the graph");
  }
  EmbeddingState e = init;
  ForwardDiagnostics local;
  ForwardDiagnostics& d = diag ? *diag : local;
  d = {};
  d.forward_updates.assign(g.size(), 0);
  d.reverse_updates.assign(g.size(), 0);

  Propagator fwd(g, model, e, false);
  for (const auto& level : plan.levels) fwd.run_level(level, &d.forward_updates);

  const auto& cfg = model.config();
  for (std::size_t r = 0; r < plan.cyclic_regions.size(); ++r) {
    const auto& region = plan.cyclic_regions[r];
    // Region members grouped by level, in (level, id) order.
    std::vector<std::vector<NodeId>> by_level;
    int current = -1;
    for (NodeId v : region.order) {
      if (plan.level_of[v] != current) {
        by_level.emplace_back();
        current = plan.level_of[v];
      }
      by_level.back().push_back(v);
    }
    RegionTrace trace;
    trace.region = r;
    while (trace.iterations < cfg.cycle_max_iters) {
      std::vector<std::array<Matrix, 3>> before;
      before.reserve(region.nodes.size());
      for (NodeId v : region.nodes) before.push_back({e.hs[v].value(), e.hf[v].value(), e.hseq[v].value()});
      for (const auto& lv : by_level) fwd.run_level(lv, &d.forward_updates);
      ++trace.iterations;
      double residual = 0;
      for (std::size_t i = 0; i < region.nodes.size(); ++i) {
        const NodeId v = region.nodes[i];
        residual = std::max({residual, relative_change(before[i][0], e.hs[v].value()),
                             relative_change(before[i][1], e.hf[v].value()),
                             relative_change(before[i][2], e.hseq[v].value())});
      }
      trace.residuals.push_back(residual);
      if (residual < cfg.cycle_tol) {
        trace.converged = true;
        break;
      }
    }
    d.regions.push_back(std::move(trace));
  }

  if (cfg.reverse_layer) {
    Propagator rev(g, model, e, true);
    for (auto it = plan.levels.rbegin(); it != plan.levels.rend(); ++it) {
      rev.run_level(*it, &d.reverse_updates);
    }
  }
  return e;
}

std::vector<NodeId> supervised_nodes(const CircuitGraph& g) {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.kind(v) != NodeKind::PI) out.push_back(v);
  }
  return out;
}

Predictions predict_heads(const CircuitGraph& g, const EmbeddingState& emb, const Model& model,
                          const LabelSet& labels) {
  const auto& params = model.params();
  Predictions p;
  if (!labels.rc.empty()) {
    std::vector<NodeId> lo, hi;
    for (const auto& r : labels.rc) {
      lo.push_back(std::min(r.a, r.b));
      hi.push_back(std::max(r.a, r.b));
    }
    p.rc_logits = mlp3(concat_cols({stack(emb.hs, lo), stack(emb.hs, hi)}), params, "head.rc");
  }
  p.nodes = supervised_nodes(g);
  if (!p.nodes.empty()) {
    p.lg = sigmoid(mlp3(stack(emb.hf, p.nodes), params, "head.lg"));
    p.tr = sigmoid(mlp3(stack(emb.hseq, p.nodes), params, "head.tr"));
  }
  auto cosine_map = [](const std::vector<Var>& space, const std::vector<NodeId>& is,
                       const std::vector<NodeId>& js, Real sign) {
    Var c = row_cosine(stack(space, is), stack(space, js));
    return add(scale(c, sign * Real(0.5)), Var::constant(Matrix(is.size(), 1, Real(0.5))));
  };
  if (!labels.f.empty()) {
    std::vector<NodeId> is, js;
    for (const auto& f : labels.f) {
      is.push_back(f.i);
      js.push_back(f.j);
    }
    p.f = cosine_map(emb.hf, is, js, Real(-1));
  }
  if (!labels.ffsim.empty()) {
    std::vector<NodeId> is, js;
    for (const auto& f : labels.ffsim) {
      is.push_back(f.i);
      js.push_back(f.j);
    }
    p.ffsim = cosine_map(emb.hseq, is, js, Real(1));
  }
  return p;
}

nlohmann::json TaskValues::to_json() const {
  return {{"rc", rc}, {"lg", lg}, {"tr", tr}, {"f", f}, {"ffsim", ffsim}};
}

LossResult compute_loss(const Predictions& p, const LabelSet& labels, const LossWeights& w) {
  LossResult out;
  std::vector<Var> terms;
  auto add_term = [&](const Var& term, double weight) {
    if (weight != 0.0) terms.push_back(scale(term, static_cast<Real>(weight)));
  };

  if (!labels.rc.empty()) {
    std::vector<double> y;
    for (const auto& r : labels.rc) y.push_back(r.label);
    Var bce = bce_with_logits(p.rc_logits, column(y));
    out.loss.rc = bce.item();
    Matrix prob = p.rc_logits.value();
    for (Real& x : prob.data) x = Real(1) / (Real(1) + std::exp(-x));
    out.avg_pe.rc = mean_abs(prob, y);
    out.counts.rc = y.size();
    add_term(bce, w.rc);
  }
  if (!p.nodes.empty()) {
    std::vector<double> p1, ptr;
    for (NodeId v : p.nodes) {
      p1.push_back(labels.p1.at(v));
      ptr.push_back(labels.ptr.at(v));
    }
    check_labels(p1, "lg");
    check_labels(ptr, "tr");
    Var lg = mean_abs_diff(p.lg, column(p1));
    Var tr = mean_abs_diff(p.tr, column(ptr));
    out.loss.lg = out.avg_pe.lg = lg.item();
    out.loss.tr = out.avg_pe.tr = tr.item();
    out.counts.lg = out.counts.tr = p.nodes.size();
    add_term(lg, w.lg);
    add_term(tr, w.tr);
  }
  if (!labels.f.empty()) {
    std::vector<double> y;
    for (const auto& f : labels.f) y.push_back(f.distance);
    check_labels(y, "f");
    Var l = mean_abs_diff(p.f, column(y));
    out.loss.f = out.avg_pe.f = l.item();
    out.counts.f = y.size();
    add_term(l, w.f);
  }
  if (!labels.ffsim.empty()) {
    std::vector<double> y;
    for (const auto& f : labels.ffsim) y.push_back(f.sim);
    check_labels(y, "ffsim");
    Var l = mean_abs_diff(p.ffsim, column(y));
    out.loss.ffsim = out.avg_pe.ffsim = l.item();
    out.counts.ffsim = y.size();
    add_term(l, w.ffsim);
  }
  if (terms.empty()) {
    out.total = Var::constant(Matrix(1, 1));
  } else {
    out.total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = add(out.total, terms[i]);
  }
  return out;
}

std::vector<Sample> load_samples(const std::vector<DatasetRecord>& records,
                                 const std::filesystem::path& base_dir) {
  std::map<std::string, std::pair<std::shared_ptr<const CircuitGraph>, std::shared_ptr<const PropagationPlan>>>
      cache;
  std::vector<Sample> out;
  for (const auto& r : records) {
    auto it = cache.find(r.circuit_path);
    if (it == cache.end()) {
      std::filesystem::path path = r.circuit_path;
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      auto g = std::make_shared<const CircuitGraph>(load_circuit(path));
      require_valid(*g);
      auto plan = std::make_shared<const PropagationPlan>(levelize(*g));
      it = cache.emplace(r.circuit_path, std::make_pair(g, plan)).first;
    }
    const auto& g = *it->second.first;
    if (r.labels.p1.size() != g.size() || r.labels.ptr.size() != g.size()) {
      throw std::invalid_argument("labels for " + r.circuit_path + " do not match its node count");
    }
    out.push_back({r.circuit_path, it->second.first, it->second.second, r.workload, r.labels});
  }
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs_phase1", epochs_phase1},
          {"epochs_phase2", epochs_phase2},
          {"lr", lr},
          {"weights",
           {{"rc", weights.rc}, {"lg", weights.lg}, {"tr", weights.tr}, {"f", weights.f}, {"ffsim", weights.ffsim}}},
          {"seed", seed}};
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"phase", phase},
          {"total", total},
          {"loss", loss.to_json()},
          {"weighted_loss", weighted_loss.to_json()},
          {"avg_pe", avg_pe.to_json()}};
}

LossResult evaluate_sample(const Sample& s, const Model& model, const LossWeights& w,
                           ForwardDiagnostics* diag) {
  const auto init = init_embeddings(*s.graph, s.workload, model.config().dim, model.config().seed);
  const auto emb = forward(*s.graph, *s.plan, model, init, diag);
  return compute_loss(predict_heads(*s.graph, emb, model, s.labels), s.labels, w);
}

namespace {

struct Pooled {
  TaskValues sum;
  TaskCounts n;

  void add(const TaskValues& pe, const TaskCounts& c) {
    sum.rc += pe.rc * static_cast<double>(c.rc);
    sum.lg += pe.lg * static_cast<double>(c.lg);
    sum.tr += pe.tr * static_cast<double>(c.tr);
    sum.f += pe.f * static_cast<double>(c.f);
    sum.ffsim += pe.ffsim * static_cast<double>(c.ffsim);
    n.rc += c.rc;
    n.lg += c.lg;
    n.tr += c.tr;
    n.f += c.f;
    n.ffsim += c.ffsim;
  }
  TaskValues mean() const {
    auto div = [](double s, std::size_t k) { return k ? s / static_cast<double>(k) : 0.0; };
    return {div(sum.rc, n.rc), div(sum.lg, n.lg), div(sum.tr, n.tr), div(sum.f, n.f),
            div(sum.ffsim, n.ffsim)};
  }
};

}  // namespace

std::vector<EpochRecord> train(const std::vector<Sample>& data, Model& model,
                               const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  const auto& w = cfg.weights;
  for (double x : {w.rc, w.lg, w.tr, w.f, w.ffsim}) {
    if (!(x >= 0)) throw std::invalid_argument("train: loss weights must be >= 0");
  }
  const auto& mc = model.config();
  std::vector<EmbeddingState> inits;
  inits.reserve(data.size());
  for (const auto& s : data) inits.push_back(init_embeddings(*s.graph, s.workload, mc.dim, mc.seed));

  AdamConfig adam;
  adam.lr = cfg.lr;
  Rng order_rng(stream_key(cfg.seed, 0x7a11));
  std::vector<std::size_t> order(data.size());
  std::vector<EpochRecord> history;
  const std::size_t epochs = cfg.epochs_phase1 + cfg.epochs_phase2;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = epoch <= cfg.epochs_phase1 ? 1 : 2;
    LossWeights lw = cfg.weights;
    if (rec.phase == 1) lw.ffsim = 0;

    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    Pooled pooled;
    model.params().zero_grad();
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = data[order[k]];
        const auto emb = forward(*s.graph, *s.plan, model, inits[order[k]]);
        const auto res = compute_loss(predict_heads(*s.graph, emb, model, s.labels), s.labels, lw);
        if (res.total.requires_grad()) backward(res.total);
        rec.loss.rc += res.loss.rc;
        rec.loss.lg += res.loss.lg;
        rec.loss.tr += res.loss.tr;
        rec.loss.f += res.loss.f;
        rec.loss.ffsim += res.loss.ffsim;
        rec.total += res.total.item();
        pooled.add(res.avg_pe, res.counts);
      }
      model.params().scale_grad(Real(1) / static_cast<Real>(end - start));
      adam_step(model.params(), adam);
    }
    const double n = static_cast<double>(data.size());
    rec.loss = {rec.loss.rc / n, rec.loss.lg / n, rec.loss.tr / n, rec.loss.f / n, rec.loss.ffsim / n};
    rec.weighted_loss = {lw.rc * rec.loss.rc, lw.lg * rec.loss.lg, lw.tr * rec.loss.tr,
                         lw.f * rec.loss.f, lw.ffsim * rec.loss.ffsim};
    rec.total /= n;
    rec.avg_pe = pooled.mean();
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

nlohmann::json EvalReport::to_json() const {
  auto per = nlohmann::json::array();
  for (const auto& c : circuits) per.push_back({{"name", c.name}, {"avg_pe", c.avg_pe.to_json()}});
  return {{"avg_pe", pooled.to_json()},
          {"counts", {{"rc", counts.rc}, {"lg", counts.lg}, {"tr", counts.tr}, {"f", counts.f}, {"ffsim", counts.ffsim}}},
          {"circuits", per}};
}

EvalReport evaluate(const Model& model, const std::vector<Sample>& data) {
  EvalReport report;
  Pooled pooled;
  for (const auto& s : data) {
    const auto res = evaluate_sample(s, model);
    report.circuits.push_back({s.name, res.avg_pe, res.counts});
    pooled.add(res.avg_pe, res.counts);
  }
  report.pooled = pooled.mean();
  report.counts = pooled.n;
  return report;
}

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
