#pragma once

#include "handmask/metrics.hpp"
#include "handmask/model.hpp"
#include "handmask/training.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <vector>

namespace handmask {

enum class FusionMode { kLogits, kProbabilities };

struct FinetuneConfig {
  int epochs = 30;
  int batch_size = 4;
  int frames = 32;
  int train_per_class = 5;
  FusionMode fusion = FusionMode::kLogits;
  OptimizerConfig optimizer;

  void validate() const;
};

// Elementwise sum of two score vectors; probabilities mode softmaxes each first.
Eigen::RowVectorXd fuse_logits(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, FusionMode mode = FusionMode::kLogits);

struct ClassificationMetrics {
  double top1_pi = 0.0;
  double top5_pi = 0.0;
  double top1_pc = 0.0;
  double top5_pc = 0.0;
  std::map<int, int> per_class_counts;

  nlohmann::ordered_json to_json() const;
};

// Top-k report; k = 5 is capped at the class count.
ClassificationMetrics classification_metrics(const Eigen::MatrixXd& scores, const std::vector<int>& labels);

// Cross-entropy of one unmasked sequence under the prediction head.
template <typename S>
Var<S> classification_loss(const HandMaskModel<S>& model, ParameterBinding<S>& p, const TokenSequence& tokens, int label,
                           DropoutContext* drop = nullptr) {
  Var<S> logits = model.logits(p, model.encode(p, tokens, drop));
  typename Graph<S>::Scope scope(p.graph(), "loss");
  return cross_entropy(logits, label);
}

// Logits (centre-sampled, no dropout) for every listed sequence: N x K.
template <typename S>
Eigen::MatrixXd predict_scores(const HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data,
                               const std::vector<int>& indices, int frames);

struct FinetuneEpoch {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> log;
  Eigen::MatrixXd heldout_scores;
  std::vector<int> heldout_labels;
  ClassificationMetrics metrics;
};

// Supervised training of every parameter in `model` (which must carry a
// prediction head and no decoder), then evaluation on `split.heldout`.
template <typename S>
FinetuneResult finetune_run(HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data, const DataSplit& split,
                            const FinetuneConfig& config, TrainingState<S>& state,
                            const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

}  // namespace handmask
