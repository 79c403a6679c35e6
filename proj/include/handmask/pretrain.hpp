#pragma once

#include "handmask/model.hpp"
#include "handmask/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace handmask {

enum class MaskStrategy { kNone, kJoint, kFrame, kIdentity };
enum class JointCorruption { kZero, kDisturb };

struct TokenMask {
  bool chosen = false;
  MaskStrategy strategy = MaskStrategy::kNone;
  JointCorruption corruption = JointCorruption::kZero;
  std::vector<int> joints;                    // ascending, joint strategy only
  std::vector<Eigen::Vector2d> disturbance;   // model units, one per masked joint when disturbing
};

struct MaskPlan {
  std::vector<TokenMask> tokens;

  std::vector<bool> chosen() const;
  int chosen_count() const;
};

struct PretrainConfig {
  int max_masked_joints = 5;
  double choose_rate = 0.5;
  double confidence_threshold = 0.5;  // epsilon
  double reg_weight = 0.01;           // lambda
  double shape_weight = 10.0;
  double shape_smooth_weight = 100.0;
  double disturb_sigma = 12.8;        // crop pixels
  int epochs = 20;
  int batch_size = 2;
  int frames = 32;
  double heldout_fraction = 0.1;
  OptimizerConfig optimizer;

  void validate() const;
};

MaskPlan plan_masking(Eigen::Index token_count, const PretrainConfig& config, Rng& rng);
inline MaskPlan plan_masking(const TokenSequence& tokens, const PretrainConfig& config, Rng& rng) {
  return plan_masking(tokens.token_count(), config, rng);
}

// Corrupted copy of `tokens`; confidences are left as they were.
TokenSequence apply_masking(const TokenSequence& tokens, const MaskPlan& plan);

// Per-coordinate weights 1(c >= eps) * c on chosen tokens, zero elsewhere (2T x 42).
Eigen::MatrixXd reconstruction_weights(const Eigen::MatrixXd& confidence, const std::vector<bool>& chosen, double eps);

// Sum of weights * |predicted - target| over every coordinate.
template <typename S>
Var<S> loss_rec(Var<S> predicted, const Eigen::MatrixXd& target, const Eigen::MatrixXd& weights) {
  return weighted_l1(predicted, Matrix<S>(target.cast<S>()), Matrix<S>(weights.cast<S>()));
}

// Per hand: sum_t |theta_t|^2 + w_beta |beta_t|^2 + w_delta |beta_t - beta_{t-1}|^2.
// `latent` holds `hands` consecutive blocks of `steps` rows.
template <typename S>
Var<S> loss_reg(Var<S> latent, int steps, double shape_weight, double smooth_weight) {
  if (steps < 1 || latent.rows() % steps != 0) throw std::invalid_argument("loss_reg: rows are not a whole number of hands");
  Var<S> theta = slice_cols(latent, kLatentPose, kPoseDims);
  Var<S> beta = slice_cols(latent, kLatentShape, kShapeDims);
  Var<S> total = add(sum(square(theta)), scale(sum(square(beta)), static_cast<S>(shape_weight)));
  if (steps > 1) {
    for (Eigen::Index h = 0; h < latent.rows() / steps; ++h) {
      Var<S> later = slice_rows(beta, h * steps + 1, steps - 1);
      Var<S> earlier = slice_rows(beta, h * steps, steps - 1);
      total = add(total, scale(sum(square(sub(later, earlier))), static_cast<S>(smooth_weight)));
    }
  }
  return total;
}

template <typename S>
Var<S> total_loss(Var<S> rec, Var<S> reg, double reg_weight) {
  return add(rec, scale(reg, static_cast<S>(reg_weight)));
}

template <typename S>
struct PretrainForward {
  Var<S> latent;   // 2T x 41
  Var<S> joints;   // 2T x 42, model units
  Var<S> rec;
  Var<S> reg;
  Var<S> total;
};

// One sequence through embed -> encode -> decode -> losses. The
// reconstruction term is measured in crop pixels.
template <typename S>
PretrainForward<S> pretrain_forward(const HandMaskModel<S>& model, ParameterBinding<S>& p, const TokenSequence& target,
                                    const TokenSequence& input, const MaskPlan& plan, const PretrainConfig& config,
                                    DropoutContext* drop = nullptr) {
  PretrainForward<S> f;
  Var<S> features = model.encode(p, input, drop);
  f.latent = model.latent(p, features);
  {
    typename Graph<S>::Scope scope(p.graph(), "decoder.hand");
    f.joints = model.decode(f.latent);
  }
  const double px = 1.0 / kUnitsPerPixel;
  const Eigen::MatrixXd weights = reconstruction_weights(target.confidence, plan.chosen(), config.confidence_threshold);
  {
    typename Graph<S>::Scope scope(p.graph(), "loss");
    f.rec = loss_rec(scale(f.joints, static_cast<S>(px)), Eigen::MatrixXd(target.coords * px), weights);
    f.reg = loss_reg(f.latent, target.steps, config.shape_weight, config.shape_smooth_weight);
    f.total = total_loss(f.rec, f.reg, config.reg_weight);
  }
  return f;
}

struct EpochLog {
  int epoch = 0;
  double loss_rec = 0.0;
  double loss_reg = 0.0;
  double loss_total = 0.0;
  double heldout_pck20 = 0.0;
  double lr = 0.0;

  nlohmann::ordered_json to_json() const;
};

// Masked-input vs reconstructed-output agreement with the clean target, in
// crop pixels. "masked" scores cover the chosen tokens, "all" every token;
// joints below the confidence threshold are excluded throughout.
struct ReconstructionScores {
  double input_pck20 = 0.0;
  double output_pck20 = 0.0;
  double input_auc = 0.0;
  double output_auc = 0.0;
  double input_pck20_all = 0.0;
  double output_pck20_all = 0.0;
  std::int64_t joints = 0;

  nlohmann::ordered_json to_json() const;
};

// Per-sequence reconstruction record (centre sampling, seeded masking).
struct Reconstruction {
  TokenSequence target;
  TokenSequence input;
  MaskPlan plan;
  Eigen::MatrixXd output;     // 2T x 42, model units
  Eigen::MatrixXd latent;     // 2T x 41
  Eigen::MatrixXd joints_3d;  // 2T x 63, model space before the camera
};

// Produces the reconstruction of one sequence. With `model` null the output
// is a copy of the masked input (the identity model).
template <typename S>
Reconstruction reconstruct(const HandMaskModel<S>* model, const NormalizedSequence& sequence, const PretrainConfig& config,
                           std::uint64_t mask_seed);

ReconstructionScores score_reconstructions(const std::vector<Reconstruction>& items, double confidence_threshold);

template <typename S>
ReconstructionScores evaluate_reconstruction(const HandMaskModel<S>* model, const std::vector<NormalizedSequence>& data,
                                             const std::vector<int>& indices, const PretrainConfig& config,
                                             std::uint64_t mask_seed);

struct PretrainResult {
  std::vector<EpochLog> log;
  ReconstructionScores heldout;
};

// Runs epochs state.epoch .. config.epochs - 1 over `split.train`, logging
// each epoch through `on_epoch`. Throws NumericError naming the batch when a
// loss turns non-finite.
template <typename S>
PretrainResult pretrain_run(HandMaskModel<S>& model, const std::vector<NormalizedSequence>& data, const DataSplit& split,
                            const PretrainConfig& config, TrainingState<S>& state,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace handmask
