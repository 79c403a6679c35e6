#pragma once

#include "handmask/posedata.hpp"

#include <Eigen/Dense>

#include <vector>

namespace handmask {

// Crop pixels [0,256] <-> model space [-1,1].
inline constexpr double kUnitsPerPixel = 2.0 / kCropSize;
inline double crop_pixels_to_unit(double px) { return px * kUnitsPerPixel - 1.0; }

// A sequence after per-frame cropping, in model space. Undetected joints sit
// at the crop centre (0, 0) with zero confidence.
struct NormalizedSequence {
  int steps = 0;
  std::array<Eigen::MatrixXd, 2> coords;      // per chirality: steps x 42
  std::array<Eigen::MatrixXd, 2> confidence;  // per chirality: steps x 21
  std::optional<int> label;
};

NormalizedSequence normalize_sequence(const HandSequence& sequence);

// 2T visual tokens: rows [left t0..t_{T-1}, right t0..t_{T-1}].
struct TokenSequence {
  int steps = 0;
  Eigen::MatrixXd coords;      // 2T x 42, (x0, y0, x1, y1, ...) in model space
  Eigen::MatrixXd confidence;  // 2T x 21
  std::vector<int> time_index;
  std::vector<Chirality> chirality;

  Eigen::Index token_count() const { return coords.rows(); }
};

// Builds tokens from the given per-step sample indices, one list per hand.
TokenSequence tokenize(const NormalizedSequence& sequence, const std::vector<int>& left_steps,
                       const std::vector<int>& right_steps);
inline TokenSequence tokenize(const NormalizedSequence& sequence, const std::vector<int>& steps) {
  return tokenize(sequence, steps, steps);
}

}  // namespace handmask
