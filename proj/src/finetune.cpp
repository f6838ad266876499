#include "deepseq/finetune.hpp"

#include <cmath>
#include <numeric>

namespace dseq::nn::inline DSEQ_PRECISION_NS {

Sample activity_sample(std::shared_ptr<const CircuitGraph> g,
                       std::shared_ptr<const PropagationPlan> plan, const WorkloadCase& c,
                       std::string name) {
  Sample s;
  s.name = std::move(name);
  s.graph = std::move(g);
  s.plan = std::move(plan);
  s.workload = c.workload;
  s.labels.p1 = c.stats.p1;
  s.labels.ptr = c.stats.ptr;
  return s;
}

std::vector<EpochRecord> finetune_workloads(Model& model, std::shared_ptr<const CircuitGraph> g,
                                            std::shared_ptr<const PropagationPlan> plan,
                                            const std::vector<WorkloadCase>& cases,
                                            const FinetuneConfig& cfg,
                                            const EpochCallback& on_epoch) {
  std::vector<Sample> data;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    data.push_back(activity_sample(g, plan, cases[i], "workload" + std::to_string(i)));
  }
  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.epochs_phase1 = cfg.epochs;
  tc.epochs_phase2 = 0;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.weights = {0, 1, 1, 0, 0};
  return train(data, model, tc, on_epoch);
}

std::vector<double> predict_transitions(const Model& model, const CircuitGraph& g,
                                        const PropagationPlan& plan, const Workload& w) {
  const auto& mc = model.config();
  const auto emb = forward(g, plan, model, init_embeddings(g, w, mc.dim, mc.seed));
  const auto p = predict_heads(g, emb, model, LabelSet{});
  std::vector<double> tr(g.size(), 0.0);
  for (std::size_t i = 0; i < g.pis().size(); ++i) {
    const NodeId v = g.pis()[i];
    tr[v] = g.const_false() == v ? 0.0 : w.pis[i].ptr;
  }
  for (std::size_t k = 0; k < p.nodes.size(); ++k) tr[p.nodes[k]] = p.tr.value().data[k];
  return tr;
}

PowerEval evaluate_power(const Model& model, const CircuitGraph& g, const PropagationPlan& plan,
                         const WorkloadCase& c, const PowerConfig& pc, const std::vector<bool>& mask) {
  const auto tr = predict_transitions(model, g, plan, c.workload);
  PowerEval e;
  e.predicted = power_estimate(tr, pc, mask);
  e.ground_truth = power_estimate(c.stats.ptr, pc, mask);
  e.rel_error = e.ground_truth > 0 ? std::abs(e.predicted - e.ground_truth) / e.ground_truth
                                   : std::abs(e.predicted - e.ground_truth);
  double acc = 0;
  std::size_t n = 0;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (!mask[v]) continue;
    acc += std::abs(tr[v] - c.stats.ptr[v]);
    ++n;
  }
  e.tr_avg_pe = n ? acc / static_cast<double>(n) : 0.0;
  return e;
}

std::vector<NodeId> reliability_nodes(const CircuitGraph& g) {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (g.const_false() != v) out.push_back(v);
  }
  return out;
}

namespace {

Var flip_predictions(const Model& model, const ReliabilitySample& s, const std::vector<NodeId>& nodes) {
  const auto& mc = model.config();
  const auto emb = forward(*s.graph, *s.plan, model, init_embeddings(*s.graph, s.workload, mc.dim, mc.seed));
  std::vector<Var> hs, hf, hq;
  for (NodeId v : nodes) {
    hs.push_back(emb.hs[v]);
    hf.push_back(emb.hf[v]);
    hq.push_back(emb.hseq[v]);
  }
  Var x = concat_cols({stack_rows(hs), stack_rows(hf), stack_rows(hq)});
  return sigmoid(mlp3(x, model.params(), "head.rel"));
}

Matrix flip_targets(const ReliabilitySample& s, const std::vector<NodeId>& nodes) {
  if (s.labels.p01.size() != s.graph->size() || s.labels.p10.size() != s.graph->size()) {
    throw std::invalid_argument("flip labels do not match the circuit");
  }
  Matrix m(nodes.size(), 2);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    m(k, 0) = static_cast<Real>(s.labels.p01[nodes[k]]);
    m(k, 1) = static_cast<Real>(s.labels.p10[nodes[k]]);
  }
  return m;
}

}  // namespace

Matrix predict_flips(const Model& model, const ReliabilitySample& s) {
  return flip_predictions(model, s, reliability_nodes(*s.graph)).value();
}

nlohmann::json ReliabilityEpoch::to_json() const {
  return {{"epoch", epoch}, {"loss", loss}, {"avg_pe", avg_pe}};
}

std::vector<ReliabilityEpoch> finetune_reliability(
    Model& model, const std::vector<ReliabilitySample>& data, const FinetuneConfig& cfg,
    const std::function<void(const ReliabilityEpoch&)>& on_epoch) {
  if (data.empty()) throw std::invalid_argument("finetune_reliability: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("finetune_reliability: batch_size must be positive");
  model.add_reliability_head();
  std::vector<std::vector<NodeId>> nodes;
  std::vector<Matrix> targets;
  for (const auto& s : data) {
    nodes.push_back(reliability_nodes(*s.graph));
    targets.push_back(flip_targets(s, nodes.back()));
  }
  AdamConfig adam;
  adam.lr = cfg.lr;
  Rng order_rng(stream_key(cfg.seed, 0x4e1a));
  std::vector<std::size_t> order(data.size());
  std::vector<ReliabilityEpoch> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    ReliabilityEpoch rec;
    rec.epoch = epoch;
    double pe_sum = 0, pe_count = 0;
    model.params().zero_grad();
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        Var loss = mean_abs_diff(flip_predictions(model, data[i], nodes[i]), targets[i]);
        backward(loss);
        rec.loss += loss.item();
        pe_sum += loss.item() * static_cast<double>(targets[i].size());
        pe_count += static_cast<double>(targets[i].size());
      }
      model.params().scale_grad(Real(1) / static_cast<Real>(end - start));
      adam_step(model.params(), adam);
    }
    rec.loss /= static_cast<double>(data.size());
    rec.avg_pe = pe_count > 0 ? pe_sum / pe_count : 0.0;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

double reliability_avg_pe(const Model& model, const std::vector<ReliabilitySample>& data) {
  double sum = 0, count = 0;
  for (const auto& s : data) {
    const auto nodes = reliability_nodes(*s.graph);
    const Matrix pred = flip_predictions(model, s, nodes).value();
    const Matrix target = flip_targets(s, nodes);
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred.data[i] - target.data[i]);
    count += static_cast<double>(pred.size());
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
