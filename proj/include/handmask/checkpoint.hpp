#pragma once

#include "handmask/model.hpp"
#include "handmask/training.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handmask {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "SBC1", u64 LE header length, JSON header, then row-major f32 LE blobs in
// header order. Optimizer moments travel as arrays named adam.m/<param> and
// adam.v/<param>.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string architecture_hash;
  nlohmann::ordered_json architecture;
  int epoch = 0;
  std::string rng_state;
  std::optional<std::int64_t> optimizer_step;
  std::vector<std::pair<std::string, Eigen::MatrixXf>> arrays;

  const Eigen::MatrixXf* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of the model's parameters and, when given, the training state.
Checkpoint capture_checkpoint(const HandMaskModel<float>& model, const TrainingState<float>* state);

// Fails with both hashes when the checkpoint was written for another architecture.
void check_architecture(const Checkpoint& checkpoint, const ModelConfig& model);

// Copies every model parameter whose name starts with one of `prefixes`.
// Each must exist in the checkpoint with the same shape.
void restore_parameters(HandMaskModel<float>& model, const Checkpoint& checkpoint, const std::vector<std::string>& prefixes);

// Optimizer moments, step, epoch and RNG stream.
void restore_training_state(TrainingState<float>& state, const Checkpoint& checkpoint, const ParameterStore<float>& params,
                            const OptimizerConfig& optimizer);

// Class count of a stored prediction head, if any.
std::optional<int> checkpoint_head_classes(const Checkpoint& checkpoint);

}  // namespace handmask
