#include "handmask/posedata.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace handmask {
namespace {

constexpr double kClassSpread = 0.4;
constexpr double kWaveAmplitude = 0.45;
constexpr double kSignerStyle = 0.15;

struct Sinusoid {
  Eigen::Matrix<double, kPoseDims, 1> amplitude;
  double frequency;  // cycles per sequence
  double phase;
};

// One hand's class motif: a base pose plus 2-4 sinusoids in pose space.
struct Motif {
  Eigen::Matrix<double, kPoseDims, 1> base;
  std::vector<Sinusoid> waves;
};

// Class motifs share a common base pose and differ by a smaller deviation
// plus their own waves, so classes are told apart by motion more than by
// static hand shape.
Motif draw_motif(const Eigen::Matrix<double, kPoseDims, 1>& shared, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Motif m;
  for (int i = 0; i < kPoseDims; ++i) m.base(i) = shared(i) + (i < 3 ? 0.1 : kClassSpread) * normal(rng);
  const int waves = 2 + static_cast<int>(unit(rng) * 3.0);
  for (int k = 0; k < waves; ++k) {
    Sinusoid s;
    for (int i = 0; i < kPoseDims; ++i) s.amplitude(i) = (i < 3 ? 0.1 : kWaveAmplitude) * normal(rng);
    s.frequency = 0.5 + 1.5 * unit(rng);
    s.phase = 2.0 * std::numbers::pi * unit(rng);
    m.waves.push_back(s);
  }
  return m;
}

Eigen::Matrix<double, kPoseDims, 1> motif_pose(const Motif& m, double u, double phase_shift, double gain) {
  Eigen::Matrix<double, kPoseDims, 1> pose = m.base;
  for (const auto& w : m.waves)
    pose += gain * w.amplitude * std::sin(2.0 * std::numbers::pi * w.frequency * u + w.phase + phase_shift);
  return pose;
}

}  // namespace

void validate_synth_config(const SynthConfig& c) {
  if (c.class_count < 1) throw std::invalid_argument("synth.class_count must be >= 1");
  if (c.sequences_per_class < 1) throw std::invalid_argument("synth.sequences_per_class must be >= 1");
  if (c.sequence_length < 1) throw std::invalid_argument("synth.sequence_length must be >= 1");
  for (double r : {c.dropout_rate, c.frame_drop_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("synth rates must lie in [0,1]");
  if (!(c.noise_sigma >= 0.0 && c.noise_sigma <= 1.0)) throw std::invalid_argument("synth.noise_sigma must lie in [0,1]");
}

std::vector<HandSequence> synth_generate(const SynthConfig& config, const HandModelAsset& asset) {
  validate_synth_config(config);
  const DecoderTables<double> tables = DecoderTables<double>::from_asset(asset);
  const double sigma = config.noise_sigma * kCropSize;
  std::vector<HandSequence> out;
  out.reserve(static_cast<std::size_t>(config.class_count * config.sequences_per_class));
  std::array<Eigen::Matrix<double, kPoseDims, 1>, 2> shared;
  {
    Rng base_rng(mix_seed(config.seed, 0xba5e));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& b : shared)
      for (int i = 0; i < kPoseDims; ++i) b(i) = (i < 3 ? 0.25 : 0.6) * normal(base_rng);
  }
  for (int c = 0; c < config.class_count; ++c) {
    Rng class_rng(mix_seed(config.seed, 0x5eed, static_cast<std::uint64_t>(c)));
    const std::array<Motif, 2> motifs{draw_motif(shared[0], class_rng), draw_motif(shared[1], class_rng)};
    for (int n = 0; n < config.sequences_per_class; ++n) {
      Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(c) + 1, static_cast<std::uint64_t>(n)));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      HandSequence seq;
      seq.label = c;
      seq.source_id = "synth_c" + std::to_string(c) + "_n" + std::to_string(n);
      seq.fps = 25.0;
      // Signer-specific variation.
      Eigen::Matrix<double, kShapeDims, 1> shape;
      for (int i = 0; i < kShapeDims; ++i) shape(i) = 0.5 * normal(rng);
      const double phase_shift = 0.3 * normal(rng);
      const double gain = 0.8 + 0.4 * unit(rng);
      const double speed = 0.9 + 0.2 * unit(rng);
      const double cam_scale = 90.0 + 40.0 * unit(rng);
      const std::array<Eigen::Vector2d, 2> anchor{Eigen::Vector2d(220.0 + 40.0 * (unit(rng) - 0.5), 260.0 + 40.0 * (unit(rng) - 0.5)),
                                                  Eigen::Vector2d(420.0 + 40.0 * (unit(rng) - 0.5), 260.0 + 40.0 * (unit(rng) - 0.5))};
      const double drift_phase = 2.0 * std::numbers::pi * unit(rng);
      std::array<Eigen::Matrix<double, kPoseDims, 1>, 2> style;
      for (auto& st : style)
        for (int i = 0; i < kPoseDims; ++i) st(i) = (i < 3 ? 0.1 : kSignerStyle) * normal(rng);
      for (int t = 0; t < config.sequence_length; ++t) {
        const double u = speed * t / std::max(1, config.sequence_length - 1);
        for (int h = 0; h < 2; ++h) {
          LatentFrame<double> z;
          z.pose = motif_pose(motifs[static_cast<std::size_t>(h)], u, phase_shift, gain) + style[static_cast<std::size_t>(h)];
          z.shape = shape;
          // Right hands are viewed upright; left hands are their mirror image.
          z.cam_rotation = h == 0 ? Eigen::Vector3d(0.0, 0.0, std::numbers::pi) : Eigen::Vector3d(std::numbers::pi, 0.0, 0.0);
          z.cam_offset = anchor[static_cast<std::size_t>(h)] +
                         15.0 * Eigen::Vector2d(std::sin(2.0 * std::numbers::pi * u + drift_phase), std::cos(2.0 * std::numbers::pi * u + drift_phase));
          z.cam_scale = cam_scale;
          HandPoseFrame f;
          f.chirality = h == 0 ? Chirality::kLeft : Chirality::kRight;
          f.time_index = t;
          const bool dropped = config.frame_drop_rate > 0.0 && unit(rng) < config.frame_drop_rate;
          const Eigen::Matrix<double, kHandJoints, 2> clean = decode_joints_2d<double, double>(z, tables);
          for (int j = 0; j < kHandJoints; ++j) {
            Eigen::Vector2d jitter = Eigen::Vector2d::Zero();
            double confidence = 1.0;
            if (sigma > 0.0) {
              jitter = sigma * Eigen::Vector2d(normal(rng), normal(rng));
              confidence = std::clamp(std::exp(-jitter.squaredNorm() / (2.0 * sigma * sigma)), 0.0, 1.0);
            }
            const bool lost = config.dropout_rate > 0.0 && unit(rng) < config.dropout_rate;
            if (dropped || lost) continue;
            f.joints.row(j) = clean.row(j) + jitter.transpose();
            f.confidence(j) = confidence;
          }
          seq.frames.push_back(f);
        }
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

}  // namespace handmask
