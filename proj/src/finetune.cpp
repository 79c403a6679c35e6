#include "handmask/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace handmask {

void FinetuneConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("finetune.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("finetune.batch_size must be >= 1");
  if (frames < 1) throw std::invalid_argument("finetune.frames must be >= 1");
  if (train_per_class < 1) throw std::invalid_argument("finetune.train_per_class must be >= 1");
}

Eigen::RowVectorXd fuse_logits(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, FusionMode mode) {
  if (a.size() != b.size())
    throw std::invalid_argument("fuse_logits: score lengths differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (mode == FusionMode::kLogits) return a + b;
  auto softmax = [](const Eigen::RowVectorXd& z) {
    Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
    return Eigen::RowVectorXd(e / e.sum());
  };
  return softmax(a) + softmax(b);
}

nlohmann::ordered_json ClassificationMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["top1_pi"] = top1_pi;
  j["top5_pi"] = top5_pi;
  j["top1_pc"] = top1_pc;
  j["top5_pc"] = top5_pc;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& [label, n] : per_class_counts) counts[std::to_string(label)] = n;
  j["per_class_counts"] = counts;
  return j;
}

ClassificationMetrics classification_metrics(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  ClassificationMetrics m;
  const int k5 = std::min<int>(5, static_cast<int>(scores.cols()));
  m.top1_pi = topk_accuracy(scores, labels, 1, TopkMode::kPerInstance);
  m.top5_pi = topk_accuracy(scores, labels, k5, TopkMode::kPerInstance);
  m.top1_pc = topk_accuracy(scores, labels, 1, TopkMode::kPerClass);
  m.top5_pc = topk_accuracy(scores, labels, k5, TopkMode::kPerClass);
  for (int y : labels) ++m.per_class_counts[y];
  return m;
}

nlohmann::ordered_json FinetuneEpoch::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["lr"] = lr;
  return j;
}

template <typename S>
Eigen::MatrixXd predict_scores(const HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data,
                               const std::vector<int>& indices, int frames) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(indices.size()), model.classes());
  Rng unused(0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const NormalizedSequence& seq = data.at(static_cast<std::size_t>(indices[i]));
    const TokenSequence tokens = tokenize(seq, sample_frames(seq.steps, frames, SamplingMode::kCenter, unused));
    Graph<S> g;
    ParameterBinding<S> p(g, model.parameters(), false);
    scores.row(static_cast<Eigen::Index>(i)) = model.logits(p, model.encode(p, tokens)).value().template cast<double>();
  }
  return scores;
}

template <typename S>
FinetuneResult finetune_run(HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data, const DataSplit& split,
                            const FinetuneConfig& config, TrainingState<S>& state,
                            const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  config.validate();
  if (!model.has_head()) throw std::invalid_argument("finetune_run: model lacks a prediction head");
  if (model.has_decoder()) throw std::invalid_argument("finetune_run: the hand-model decoder must be dropped before fine-tuning");
  if (split.train.empty()) throw std::invalid_argument("finetune_run: empty training split");
  auto label_of = [&](int idx) {
    const auto& label = data.at(static_cast<std::size_t>(idx)).label;
    if (!label) throw std::invalid_argument("finetune_run: sequence " + std::to_string(idx) + " has no label");
    if (*label < 0 || *label >= model.classes())
      throw std::invalid_argument("finetune_run: label " + std::to_string(*label) + " outside the head's " +
                                  std::to_string(model.classes()) + " classes");
    return *label;
  };
  auto& params = model.parameters();
  if (state.optimizer.first_moment.size() != params.size())
    state.optimizer = AdamState<S>(config.optimizer, std::span<const Matrix<S>>(params.values()));
  DropoutContext drop{&state.rng, model.config().dropout};
  FinetuneResult result;
  for (; state.epoch < config.epochs; ++state.epoch) {
    FinetuneEpoch log;
    log.epoch = state.epoch;
    log.lr = learning_rate_at(config.optimizer, state.epoch);
    const auto batches = make_batches(split.train, config.batch_size, state.rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<Matrix<S>> grads = params.zeros_like();
      for (int idx : batches[b]) {
        const NormalizedSequence& seq = data.at(static_cast<std::size_t>(idx));
        try {
          const TokenSequence tokens = tokenize(seq, sample_frames(seq.steps, config.frames, SamplingMode::kRandom, state.rng));
          Graph<S> g;
          ParameterBinding<S> p(g, params, true);
          Var<S> loss = classification_loss(model, p, tokens, label_of(idx), &drop);
          g.backward(loss);
          p.accumulate_gradients(grads);
          log.loss += static_cast<double>(loss.value()(0, 0));
        } catch (const NumericError& e) {
          throw NumericError("fine-tuning diverged at epoch " + std::to_string(state.epoch) + ", batch " + std::to_string(b) +
                             " (sequence " + std::to_string(idx) + "): " + e.what());
        }
      }
      adam_step(state.optimizer, std::span<Matrix<S>>(params.values()), std::span<const Matrix<S>>(grads), log.lr);
    }
    log.loss /= static_cast<double>(split.train.size());
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!split.heldout.empty()) {
    result.heldout_scores = predict_scores(model, data, split.heldout, config.frames);
    for (int idx : split.heldout) result.heldout_labels.push_back(label_of(idx));
    result.metrics = classification_metrics(result.heldout_scores, result.heldout_labels);
  }
  return result;
}

template Eigen::MatrixXd predict_scores<float>(const HandMaskModel<float>&, const std::vector<NormalizedSequence>&,
                                               const std::vector<int>&, int);
template Eigen::MatrixXd predict_scores<double>(const HandMaskModel<double>&, const std::vector<NormalizedSequence>&,
                                                const std::vector<int>&, int);
template FinetuneResult finetune_run<float>(HandMaskModel<float>&, const std::vector<NormalizedSequence>&, const DataSplit&,
                                            const FinetuneConfig&, TrainingState<float>&,
                                            const std::function<void(const FinetuneEpoch&)>&);
template FinetuneResult finetune_run<double>(HandMaskModel<double>&, const std::vector<NormalizedSequence>&, const DataSplit&,
                                             const FinetuneConfig&, TrainingState<double>&,
                                             const std::function<void(const FinetuneEpoch&)>&);

}  // namespace handmask
