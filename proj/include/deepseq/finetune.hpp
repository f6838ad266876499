#pragma once

// Downstream fine-tuning: workload-specific switching activity for power,
// and a two-output flip-probability head for reliability.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "deepseq/downstream.hpp"
#include "deepseq/model.hpp"

namespace dseq::nn::inline DSEQ_PRECISION_NS {

struct FinetuneConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

/// A workload and its simulated ground truth on a fixed circuit.
struct WorkloadCase {
  Workload workload;
  SimStats stats;
};

/// Training sample carrying only p1 / ptr labels.
Sample activity_sample(std::shared_ptr<const CircuitGraph> g,
                       std::shared_ptr<const PropagationPlan> plan, const WorkloadCase& c,
                       std::string name = {});

/// Continues training on one circuit under several workloads with only the
/// logic-1 and transition tasks active.
std::vector<EpochRecord> finetune_workloads(Model& model, std::shared_ptr<const CircuitGraph> g,
                                            std::shared_ptr<const PropagationPlan> plan,
                                            const std::vector<WorkloadCase>& cases,
                                            const FinetuneConfig& cfg,
                                            const EpochCallback& on_epoch = {});

/// Predicted transition probability per node. PIs take their workload value.
std::vector<double> predict_transitions(const Model& model, const CircuitGraph& g,
                                        const PropagationPlan& plan, const Workload& w);

struct PowerEval {
  double predicted = 0;
  double ground_truth = 0;
  double rel_error = 0;  // |predicted - ground_truth| / ground_truth
  double tr_avg_pe = 0;  // over masked nodes
};

PowerEval evaluate_power(const Model& model, const CircuitGraph& g, const PropagationPlan& plan,
                         const WorkloadCase& c, const PowerConfig& pc, const std::vector<bool>& mask);

struct ReliabilitySample {
  std::string name;
  std::shared_ptr<const CircuitGraph> graph;
  std::shared_ptr<const PropagationPlan> plan;
  Workload workload;
  FlipLabels labels;
};

/// Nodes supervised by the reliability head: all but the constant.
std::vector<NodeId> reliability_nodes(const CircuitGraph& g);

/// (p01, p10) predictions, one row per reliability_nodes() entry.
Matrix predict_flips(const Model& model, const ReliabilitySample& s);

struct ReliabilityEpoch {
  std::size_t epoch = 0;
  double loss = 0;    // mean L1 over samples
  double avg_pe = 0;  // pooled over labels

  nlohmann::json to_json() const;
};

/// Adds the reliability head if missing and fine-tunes every parameter with
/// an L1 loss on (p01, p10).
std::vector<ReliabilityEpoch> finetune_reliability(
    Model& model, const std::vector<ReliabilitySample>& data, const FinetuneConfig& cfg,
    const std::function<void(const ReliabilityEpoch&)>& on_epoch = {});

double reliability_avg_pe(const Model& model, const std::vector<ReliabilitySample>& data);

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
