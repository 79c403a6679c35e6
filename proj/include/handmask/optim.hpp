#pragma once

#include "handmask/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace handmask {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double decay_factor = 0.1;
  int decay_interval = 20;  // epochs
  double weight_decay = 1e-4;
  double beta1 = 0.9;  // the "momentum" setting
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Step schedule: base * factor^floor(epoch / interval).
inline double learning_rate_at(const OptimizerConfig& config, int epoch) {
  if (epoch < 0) throw std::invalid_argument("learning_rate_at: negative epoch");
  return config.learning_rate * std::pow(config.decay_factor, epoch / config.decay_interval);
}

template <typename S>
struct AdamState {
  OptimizerConfig config;
  std::vector<Matrix<S>> first_moment;
  std::vector<Matrix<S>> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const OptimizerConfig& cfg, std::span<const Matrix<S>> params) : config(cfg) {
    for (const auto& p : params) {
      first_moment.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
      second_moment.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
    }
  }
};

// One Adam update with L2 weight decay folded into the gradient.
template <typename S>
void adam_step(AdamState<S>& state, std::span<Matrix<S>> params, std::span<const Matrix<S>> grads,
               double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
        state.first_moment[i].rows() != params[i].rows() || state.first_moment[i].cols() != params[i].cols()) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const S correction1 = static_cast<S>(1.0 - std::pow(c.beta1, t));
  const S correction2 = static_cast<S>(1.0 - std::pow(c.beta2, t));
  const S b1 = static_cast<S>(c.beta1);
  const S b2 = static_cast<S>(c.beta2);
  const S lr = static_cast<S>(learning_rate);
  const S eps = static_cast<S>(c.epsilon);
  const S wd = static_cast<S>(c.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<S> g = grads[i] + wd * params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
    params[i].array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

}  // namespace handmask
