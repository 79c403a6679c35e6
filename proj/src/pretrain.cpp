#include "handmask/pretrain.hpp"

#include "handmask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace handmask {

std::vector<bool> MaskPlan::chosen() const {
  std::vector<bool> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.chosen);
  return out;
}

int MaskPlan::chosen_count() const {
  return static_cast<int>(std::count_if(tokens.begin(), tokens.end(), [](const TokenMask& t) { return t.chosen; }));
}

void PretrainConfig::validate() const {
  if (max_masked_joints < 1 || max_masked_joints > kHandJoints)
    throw std::invalid_argument("pretrain.max_masked_joints must lie in [1, 21]");
  if (!(choose_rate > 0.0 && choose_rate <= 1.0)) throw std::invalid_argument("pretrain.choose_rate must lie in (0, 1]");
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
    throw std::invalid_argument("pretrain.confidence_threshold must lie in [0, 1]");
  if (reg_weight < 0.0 || shape_weight < 0.0 || shape_smooth_weight < 0.0)
    throw std::invalid_argument("pretrain loss weights must be non-negative");
  if (disturb_sigma < 0.0) throw std::invalid_argument("pretrain.disturb_sigma must be non-negative");
  if (epochs < 0) throw std::invalid_argument("pretrain.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("pretrain.batch_size must be >= 1");
  if (frames < 1) throw std::invalid_argument("pretrain.frames must be >= 1");
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw std::invalid_argument("pretrain.heldout_fraction must lie in [0, 1)");
}

MaskPlan plan_masking(Eigen::Index token_count, const PretrainConfig& config, Rng& rng) {
  std::bernoulli_distribution choose(config.choose_rate);
  std::uniform_int_distribution<int> strategy(0, 2);
  std::uniform_int_distribution<int> count(1, config.max_masked_joints);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, config.disturb_sigma * kUnitsPerPixel);
  MaskPlan plan;
  plan.tokens.resize(static_cast<std::size_t>(token_count));
  for (auto& t : plan.tokens) {
    t.chosen = choose(rng);
    if (!t.chosen) continue;
    switch (strategy(rng)) {
      case 0: {
        t.strategy = MaskStrategy::kJoint;
        std::vector<int> ids(kHandJoints);
        std::iota(ids.begin(), ids.end(), 0);
        const int m = count(rng);
        // Partial Fisher-Yates: the first m entries are a uniform m-subset.
        for (int i = 0; i < m; ++i) {
          std::uniform_int_distribution<int> pick(i, kHandJoints - 1);
          std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
        }
        t.joints.assign(ids.begin(), ids.begin() + m);
        std::sort(t.joints.begin(), t.joints.end());
        t.corruption = coin(rng) ? JointCorruption::kDisturb : JointCorruption::kZero;
        if (t.corruption == JointCorruption::kDisturb)
          for (int i = 0; i < m; ++i) t.disturbance.emplace_back(noise(rng), noise(rng));
        break;
      }
      case 1:
        t.strategy = MaskStrategy::kFrame;
        break;
      default:
        t.strategy = MaskStrategy::kIdentity;
        break;
    }
  }
  return plan;
}

TokenSequence apply_masking(const TokenSequence& tokens, const MaskPlan& plan) {
  if (static_cast<Eigen::Index>(plan.tokens.size()) != tokens.token_count())
    throw std::invalid_argument("apply_masking: plan covers " + std::to_string(plan.tokens.size()) + " tokens, sequence has " +
                                std::to_string(tokens.token_count()));
  TokenSequence out = tokens;
  for (std::size_t i = 0; i < plan.tokens.size(); ++i) {
    const TokenMask& t = plan.tokens[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (!t.chosen) continue;
    if (t.strategy == MaskStrategy::kFrame) {
      out.coords.row(row).setZero();
    } else if (t.strategy == MaskStrategy::kJoint) {
      for (std::size_t k = 0; k < t.joints.size(); ++k) {
        const int j = t.joints[k];
        if (t.corruption == JointCorruption::kZero) {
          out.coords(row, 2 * j) = 0.0;
          out.coords(row, 2 * j + 1) = 0.0;
        } else {
          out.coords(row, 2 * j) += t.disturbance[k](0);
          out.coords(row, 2 * j + 1) += t.disturbance[k](1);
        }
      }
    }
  }
  return out;
}

Eigen::MatrixXd reconstruction_weights(const Eigen::MatrixXd& confidence, const std::vector<bool>& chosen, double eps) {
  if (static_cast<Eigen::Index>(chosen.size()) != confidence.rows())
    throw std::invalid_argument("reconstruction_weights: chosen flags do not match token count");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(confidence.rows(), 2 * confidence.cols());
  for (Eigen::Index t = 0; t < confidence.rows(); ++t) {
    if (!chosen[static_cast<std::size_t>(t)]) continue;
    for (Eigen::Index j = 0; j < confidence.cols(); ++j) {
      const double c = confidence(t, j);
      if (c >= eps) w(t, 2 * j) = w(t, 2 * j + 1) = c;
    }
  }
  return w;
}

nlohmann::ordered_json EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss_rec"] = loss_rec;
  j["loss_reg"] = loss_reg;
  j["loss_total"] = loss_total;
  j["heldout_pck20"] = heldout_pck20;
  j["lr"] = lr;
  return j;
}

nlohmann::ordered_json ReconstructionScores::to_json() const {
  return {{"input_pck20", input_pck20},         {"output_pck20", output_pck20},
          {"input_auc", input_auc},             {"output_auc", output_auc},
          {"input_pck20_all", input_pck20_all}, {"output_pck20_all", output_pck20_all},
          {"joints", joints}};
}

template <typename S>
Reconstruction reconstruct(const HandMaskModel<S>* model, const NormalizedSequence& sequence, const PretrainConfig& config,
                           std::uint64_t mask_seed) {
  Rng rng(mask_seed);
  Reconstruction r;
  r.target = tokenize(sequence, sample_frames(sequence.steps, config.frames, SamplingMode::kCenter, rng));
  r.plan = plan_masking(r.target, config, rng);
  r.input = apply_masking(r.target, r.plan);
  const Eigen::Index n = r.target.token_count();
  if (model == nullptr) {
    r.output = r.input.coords;
    r.latent = Eigen::MatrixXd::Zero(n, kLatentDims);
    r.joints_3d = Eigen::MatrixXd::Zero(n, 3 * kHandJoints);
    return r;
  }
  Graph<S> g;
  ParameterBinding<S> p(g, model->parameters(), false);
  Var<S> latent = model->latent(p, model->encode(p, r.input));
  r.output = model->decode(latent).value().template cast<double>();
  r.latent = latent.value().template cast<double>();
  r.joints_3d.resize(n, 3 * kHandJoints);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto j3 = decode_joints_3d<S, S>(LatentFrame<S>::from_vector(latent.value().row(t)), model->tables());
    for (int j = 0; j < kHandJoints; ++j)
      for (int c = 0; c < 3; ++c) r.joints_3d(t, 3 * j + c) = static_cast<double>(j3(j, c));
  }
  return r;
}

ReconstructionScores score_reconstructions(const std::vector<Reconstruction>& items, double confidence_threshold) {
  const double px = 1.0 / kUnitsPerPixel;
  std::vector<double> in_masked, out_masked, in_all, out_all;
  for (const auto& r : items) {
    for (Eigen::Index t = 0; t < r.target.token_count(); ++t) {
      const bool chosen = r.plan.tokens[static_cast<std::size_t>(t)].chosen;
      for (int j = 0; j < kHandJoints; ++j) {
        if (r.target.confidence(t, j) < confidence_threshold) continue;
        const Eigen::Vector2d gt(r.target.coords(t, 2 * j), r.target.coords(t, 2 * j + 1));
        const double din = px * (Eigen::Vector2d(r.input.coords(t, 2 * j), r.input.coords(t, 2 * j + 1)) - gt).norm();
        const double dout = px * (Eigen::Vector2d(r.output(t, 2 * j), r.output(t, 2 * j + 1)) - gt).norm();
        in_all.push_back(din);
        out_all.push_back(dout);
        if (chosen) {
          in_masked.push_back(din);
          out_masked.push_back(dout);
        }
      }
    }
  }
  auto vec = [](std::vector<double>& v) { return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); };
  ReconstructionScores s;
  s.joints = static_cast<std::int64_t>(in_masked.size());
  s.input_pck20 = pck_from_distances(vec(in_masked), 20.0);
  s.output_pck20 = pck_from_distances(vec(out_masked), 20.0);
  s.input_auc = auc_from_distances(vec(in_masked));
  s.output_auc = auc_from_distances(vec(out_masked));
  s.input_pck20_all = pck_from_distances(vec(in_all), 20.0);
  s.output_pck20_all = pck_from_distances(vec(out_all), 20.0);
  return s;
}

template <typename S>
ReconstructionScores evaluate_reconstruction(const HandMaskModel<S>* model, const std::vector<NormalizedSequence>& data,
                                             const std::vector<int>& indices, const PretrainConfig& config,
                                             std::uint64_t mask_seed) {
  std::vector<Reconstruction> items;
  items.reserve(indices.size());
  for (int i : indices)
    items.push_back(reconstruct(model, data.at(static_cast<std::size_t>(i)), config, mix_seed(mask_seed, static_cast<std::uint64_t>(i))));
  return score_reconstructions(items, config.confidence_threshold);
}

template <typename S>
PretrainResult pretrain_run(HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data, const DataSplit& split,
                            const PretrainConfig& config, TrainingState<S>& state,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (!model.has_decoder()) throw std::invalid_argument("pretrain_run: model lacks the hand-model decoder");
  if (split.train.empty()) throw std::invalid_argument("pretrain_run: empty training split");
  auto& params = model.parameters();
  if (state.optimizer.first_moment.size() != params.size())
    state.optimizer = AdamState<S>(config.optimizer, std::span<const Matrix<S>>(params.values()));
  DropoutContext drop{&state.rng, model.config().dropout};
  PretrainResult result;
  for (; state.epoch < config.epochs; ++state.epoch) {
    const double lr = learning_rate_at(config.optimizer, state.epoch);
    EpochLog log;
    log.epoch = state.epoch;
    log.lr = lr;
    const auto batches = make_batches(split.train, config.batch_size, state.rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<Matrix<S>> grads = params.zeros_like();
      for (int idx : batches[b]) {
        const NormalizedSequence& seq = data.at(static_cast<std::size_t>(idx));
        try {
          TokenSequence target = tokenize(seq, sample_frames(seq.steps, config.frames, SamplingMode::kRandom, state.rng));
          const MaskPlan plan = plan_masking(target, config, state.rng);
          const TokenSequence input = apply_masking(target, plan);
          Graph<S> g;
          ParameterBinding<S> p(g, params, true);
          const auto f = pretrain_forward(model, p, target, input, plan, config, &drop);
          g.backward(f.total);
          p.accumulate_gradients(grads);
          log.loss_rec += static_cast<double>(f.rec.value()(0, 0));
          log.loss_reg += static_cast<double>(f.reg.value()(0, 0));
          log.loss_total += static_cast<double>(f.total.value()(0, 0));
        } catch (const NumericError& e) {
          throw NumericError("pretraining diverged at epoch " + std::to_string(state.epoch) + ", batch " + std::to_string(b) +
                             " (sequence " + std::to_string(idx) + "): " + e.what());
        }
      }
      for (const auto& gm : grads)
        if (!gm.allFinite())
          throw NumericError("pretraining diverged at epoch " + std::to_string(state.epoch) + ", batch " + std::to_string(b) +
                             ": non-finite gradient");
      adam_step(state.optimizer, std::span<Matrix<S>>(params.values()), std::span<const Matrix<S>>(grads), lr);
    }
    const double n = static_cast<double>(split.train.size());
    log.loss_rec /= n;
    log.loss_reg /= n;
    log.loss_total /= n;
    if (!std::isfinite(log.loss_total))
      throw NumericError("pretraining diverged at epoch " + std::to_string(state.epoch) + ": non-finite loss");
    if (!split.heldout.empty())
      log.heldout_pck20 = evaluate_reconstruction<S>(&model, data, split.heldout, config, 0x5eedULL).output_pck20;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!split.heldout.empty()) result.heldout = evaluate_reconstruction<S>(&model, data, split.heldout, config, 0x5eedULL);
  return result;
}

#define HANDMASK_INSTANTIATE(S)                                                                                        \
  template Reconstruction reconstruct<S>(const HandMaskModel<S>*, const NormalizedSequence&, const PretrainConfig&,   \
                                         std::uint64_t);                                                              \
  template ReconstructionScores evaluate_reconstruction<S>(const HandMaskModel<S>*, const std::vector<NormalizedSequence>&, \
                                                           const std::vector<int>&, const PretrainConfig&, std::uint64_t); \
  template PretrainResult pretrain_run<S>(HandMaskModel<S>&, const std::vector<NormalizedSequence>&, const DataSplit&, \
                                          const PretrainConfig&, TrainingState<S>&,                                   \
                                          const std::function<void(const EpochLog&)>&);

HANDMASK_INSTANTIATE(float)
HANDMASK_INSTANTIATE(double)

}  // namespace handmask
