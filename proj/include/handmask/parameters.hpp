#pragma once

#include "handmask/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace handmask {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a run seed and two stream ids.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Ordered, named collection of learnable matrices.
template <typename S>
class ParameterStore {
 public:
  int add(std::string name, Matrix<S> init) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return static_cast<int>(values_.size()) - 1;
  }

  // Weight matrix drawn uniformly in +-sqrt(6 / (fan_in + fan_out)).
  int add_weight(std::string name, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<S> w(fan_in, fan_out);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<S>(dist(rng));
    return add(std::move(name), std::move(w));
  }

  int add_zeros(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return add(std::move(name), Matrix<S>::Zero(rows, cols));
  }

  int add_ones(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return add(std::move(name), Matrix<S>::Ones(rows, cols));
  }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(int i) const { return names_[i]; }
  Matrix<S>& value(int i) { return values_[i]; }
  const Matrix<S>& value(int i) const { return values_[i]; }
  std::vector<Matrix<S>>& values() { return values_; }
  const std::vector<Matrix<S>>& values() const { return values_; }

  std::vector<Matrix<S>> zeros_like() const {
    std::vector<Matrix<S>> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(Matrix<S>::Zero(v.rows(), v.cols()));
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<S>> values_;
};

// Lazily binds store entries to graph leaves. With `trainable` false the
// leaves are constants and no gradient is tracked.
template <typename S>
class ParameterBinding {
 public:
  ParameterBinding(Graph<S>& graph, const ParameterStore<S>& store, bool trainable)
      : graph_(graph), store_(store), trainable_(trainable), vars_(store.size()) {}

  Var<S> operator[](int index) {
    auto& slot = vars_[index];
    if (!slot.valid()) slot = trainable_ ? graph_.variable(store_.value(index)) : graph_.constant(store_.value(index));
    return slot;
  }

  Graph<S>& graph() { return graph_; }
  bool trainable() const { return trainable_; }

  // Adds the gradient of every bound parameter into `grads` (aligned with the store).
  void accumulate_gradients(std::vector<Matrix<S>>& grads) const {
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].valid() && trainable_) grads[i] += graph_.grad(vars_[i]);
  }

 private:
  Graph<S>& graph_;
  const ParameterStore<S>& store_;
  bool trainable_;
  std::vector<Var<S>> vars_;
};

}  // namespace handmask
