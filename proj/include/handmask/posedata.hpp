#pragma once

#include "handmask/handmodel.hpp"
#include "handmask/parameters.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace handmask {

enum class Chirality { kLeft = 0, kRight = 1 };

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using HandJoints = Eigen::Matrix<double, kHandJoints, 2>;
using JointConfidence = Eigen::Matrix<double, kHandJoints, 1>;

struct HandPoseFrame {
  HandJoints joints = HandJoints::Zero();            // pixels
  JointConfidence confidence = JointConfidence::Zero();
  Chirality chirality = Chirality::kRight;
  int time_index = 0;

  // A hand that was not detected is all-zero with zero confidence.
  bool missing() const { return confidence.isZero(0.0) && joints.isZero(0.0); }
};

// Both hands over time. Frames are stored in canonical order
// [left t0, right t0, left t1, right t1, ...] with one entry per hand per step.
struct HandSequence {
  std::vector<HandPoseFrame> frames;
  std::optional<int> label;
  std::string source_id;
  double fps = 25.0;

  std::size_t steps() const { return frames.size() / 2; }
  const HandPoseFrame& hand(Chirality c, std::size_t step) const { return frames[2 * step + static_cast<std::size_t>(c)]; }
  HandPoseFrame& hand(Chirality c, std::size_t step) { return frames[2 * step + static_cast<std::size_t>(c)]; }
};

// Throws SchemaError when an invariant of HandSequence does not hold.
void check_sequence(const HandSequence& sequence);

// Pose-JSON document <-> HandSequence.
HandSequence parse_sequence(const nlohmann::json& document);
nlohmann::json serialize_sequence(const HandSequence& sequence);
HandSequence read_sequence_file(const std::filesystem::path& path);
void write_sequence_file(const HandSequence& sequence, const std::filesystem::path& path);

struct CropBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
};

inline constexpr double kCropSize = 256.0;

// Affine map sending `box` onto [0,256]^2; the shorter side is padded
// symmetrically so the aspect ratio is preserved.
HandPoseFrame normalize_to_crop(const HandPoseFrame& frame, const CropBox& box);
// Inverse of normalize_to_crop for the coordinates.
HandJoints denormalize_from_crop(const HandJoints& crop_joints, const CropBox& box);

// Square box centred on the centroid of the detected joints with side
// 2.2 x the larger axis extent. Empty when no joint is detected.
std::optional<CropBox> hand_crop_box(const HandPoseFrame& frame);

enum class SamplingMode { kRandom, kCenter };

// T stratified indices into [0, length); shorter sequences repeat indices.
std::vector<int> sample_frames(int length, int count, SamplingMode mode, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic signer generator.

struct SynthConfig {
  int class_count = 10;
  int sequences_per_class = 20;
  int sequence_length = 48;
  double noise_sigma = 0.005;   // fraction of the 256-pixel crop
  double dropout_rate = 0.02;
  double frame_drop_rate = 0.0;
  std::uint64_t seed = 7;
};

void validate_synth_config(const SynthConfig& config);

// Sequences ordered class-major; sequence i has label i / sequences_per_class.
std::vector<HandSequence> synth_generate(const SynthConfig& config, const HandModelAsset& asset);

}  // namespace handmask
