#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepseq/circuit.hpp"
#include "deepseq/nn.hpp"
#include "deepseq/schedule.hpp"
#include "deepseq/simulate.hpp"
#include "deepseq/supervise.hpp"

namespace dseq::nn::inline DSEQ_PRECISION_NS {

struct ModelConfig {
  std::size_t dim = 128;
  std::size_t mlp_hidden = 128;
  bool reverse_layer = true;
  double cycle_tol = 1e-3;   // stop re-sweeping a region below this change
  int cycle_max_iters = 3;   // and never re-sweep more often than this
  std::uint64_t seed = 0;    // parameter and embedding initialization

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-node structure, function and sequential embeddings (1 x dim each).
struct EmbeddingState {
  std::vector<Var> hs, hf, hseq;

  std::size_t size() const { return hs.size(); }
  /// Values of one space stacked into an n x dim matrix.
  Matrix values(const std::vector<Var>& space) const;
};

/// Source hs (PIs and FFs, in id order) are orthonormal when there are at
/// most `dim` of them, else random unit vectors. PI hf / hseq carry p1 / ptr
/// in component 0. Everything else is a random unit vector.
EmbeddingState init_embeddings(const CircuitGraph& g, const Workload& w, std::size_t dim,
                               std::uint64_t seed);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// 3-MLP on [hs, hf, hseq] with two outputs (p01, p10).
  void add_reliability_head();
  bool has_reliability_head() const { return params_.contains("head.rel.w0"); }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

struct RegionTrace {
  std::size_t region = 0;
  int iterations = 0;
  std::vector<double> residuals;  // max relative change after each re-sweep
  bool converged = false;
};

struct ForwardDiagnostics {
  std::vector<int> forward_updates;  // per node, forward sweep plus region re-sweeps
  std::vector<int> reverse_updates;  // per node
  std::vector<RegionTrace> regions;

  nlohmann::json to_json() const;
};

/// One forward sweep over the plan, region re-sweeps, then the optional
/// reverse layer. Source hs and PI hf / hseq are passed through untouched.
EmbeddingState forward(const CircuitGraph& g, const PropagationPlan& plan, const Model& model,
                       const EmbeddingState& init, ForwardDiagnostics* diag = nullptr);

/// Nodes carrying p1 / ptr supervision: every node except PIs.
std::vector<NodeId> supervised_nodes(const CircuitGraph& g);

struct Predictions {
  std::vector<NodeId> nodes;  // rows of lg / tr
  Var rc_logits;              // per RcPair
  Var lg, tr;                 // per supervised node, in [0, 1]
  Var f;                      // (1 - cos(hf_i, hf_j)) / 2 per FPair
  Var ffsim;                  // (1 + cos(hseq_i, hseq_j)) / 2 per FfPair
};

Predictions predict_heads(const CircuitGraph& g, const EmbeddingState& emb, const Model& model,
                          const LabelSet& labels);

struct TaskValues {
  double rc = 0, lg = 0, tr = 0, f = 0, ffsim = 0;
  nlohmann::json to_json() const;
};

struct TaskCounts {
  std::size_t rc = 0, lg = 0, tr = 0, f = 0, ffsim = 0;
};

struct LossWeights {
  double rc = 1, lg = 1, tr = 1, f = 1, ffsim = 1;
};

struct LossResult {
  Var total;
  TaskValues loss;    // unweighted per-task losses
  TaskValues avg_pe;  // mean |prediction - label|
  TaskCounts counts;
};

/// Weighted sum of BCE (rc) and L1 (lg, tr, f, ffsim) terms. Tasks with zero
/// weight or no labels do not enter the total. Throws std::invalid_argument
/// for labels outside [0, 1].
LossResult compute_loss(const Predictions& p, const LabelSet& labels, const LossWeights& w);

/// A circuit with one workload and its labels, ready for training.
struct Sample {
  std::string name;
  std::shared_ptr<const CircuitGraph> graph;
  std::shared_ptr<const PropagationPlan> plan;
  Workload workload;
  LabelSet labels;
};

/// Loads every record's circuit (once per distinct path; relative paths
/// resolve against `base_dir`) and builds its plan.
std::vector<Sample> load_samples(const std::vector<DatasetRecord>& records,
                                 const std::filesystem::path& base_dir = {});

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs_phase1 = 40;
  std::size_t epochs_phase2 = 40;
  double lr = 1e-4;
  LossWeights weights;
  std::uint64_t seed = 0;  // batch order

  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  int phase = 1;
  TaskValues loss;           // mean over samples, unweighted
  TaskValues weighted_loss;  // as entered into the objective
  TaskValues avg_pe;         // pooled over labels
  double total = 0;

  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Two-phase training: phase 1 with the FFsim weight forced to 0, then all
/// weights. Gradients accumulate over a batch of samples, are averaged, and
/// drive one Adam step. Throws std::invalid_argument on an empty dataset.
std::vector<EpochRecord> train(const std::vector<Sample>& data, Model& model,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Runs init, forward, heads and loss for one sample.
LossResult evaluate_sample(const Sample& s, const Model& model, const LossWeights& w = {},
                           ForwardDiagnostics* diag = nullptr);

struct CircuitEval {
  std::string name;
  TaskValues avg_pe;
  TaskCounts counts;
};

struct EvalReport {
  std::vector<CircuitEval> circuits;
  TaskValues pooled;  // label-count weighted
  TaskCounts counts;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const Model& model, const std::vector<Sample>& data);

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
