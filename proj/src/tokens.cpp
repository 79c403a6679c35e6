#include "handmask/tokens.hpp"

#include <stdexcept>

namespace handmask {

NormalizedSequence normalize_sequence(const HandSequence& sequence) {
  NormalizedSequence out;
  out.steps = static_cast<int>(sequence.steps());
  out.label = sequence.label;
  for (int h = 0; h < 2; ++h) {
    out.coords[h] = Eigen::MatrixXd::Zero(out.steps, 2 * kHandJoints);
    out.confidence[h] = Eigen::MatrixXd::Zero(out.steps, kHandJoints);
  }
  for (int step = 0; step < out.steps; ++step) {
    for (int h = 0; h < 2; ++h) {
      const HandPoseFrame& frame = sequence.hand(static_cast<Chirality>(h), static_cast<std::size_t>(step));
      const auto box = hand_crop_box(frame);
      if (!box) continue;
      const HandPoseFrame crop = normalize_to_crop(frame, *box);
      for (int j = 0; j < kHandJoints; ++j) {
        if (frame.confidence(j) <= 0.0) continue;
        out.coords[h](step, 2 * j) = crop_pixels_to_unit(crop.joints(j, 0));
        out.coords[h](step, 2 * j + 1) = crop_pixels_to_unit(crop.joints(j, 1));
        out.confidence[h](step, j) = frame.confidence(j);
      }
    }
  }
  return out;
}

TokenSequence tokenize(const NormalizedSequence& sequence, const std::vector<int>& left_steps,
                       const std::vector<int>& right_steps) {
  if (left_steps.size() != right_steps.size())
    throw std::invalid_argument("tokenize: left and right hands sampled to different lengths");
  if (left_steps.empty()) throw std::invalid_argument("tokenize: no frames sampled");
  const int T = static_cast<int>(left_steps.size());
  TokenSequence tokens;
  tokens.steps = T;
  tokens.coords.resize(2 * T, 2 * kHandJoints);
  tokens.confidence.resize(2 * T, kHandJoints);
  for (int h = 0; h < 2; ++h) {
    const auto& steps = h == 0 ? left_steps : right_steps;
    for (int k = 0; k < T; ++k) {
      const int s = steps[static_cast<std::size_t>(k)];
      if (s < 0 || s >= sequence.steps) throw std::out_of_range("tokenize: step index out of range");
      tokens.coords.row(h * T + k) = sequence.coords[h].row(s);
      tokens.confidence.row(h * T + k) = sequence.confidence[h].row(s);
    }
  }
  for (int h = 0; h < 2; ++h)
    for (int k = 0; k < T; ++k) {
      tokens.time_index.push_back(k);
      tokens.chirality.push_back(static_cast<Chirality>(h));
    }
  return tokens;
}

}  // namespace handmask
