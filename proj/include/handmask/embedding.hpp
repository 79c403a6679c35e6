#pragma once

#include "handmask/autodiff.hpp"
#include "handmask/parameters.hpp"
#include "handmask/tokens.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

namespace handmask {

struct HandGraph {
  std::vector<std::pair<int, int>> physical_edges;   // 20 bones, a tree
  std::vector<std::pair<int, int>> symmetric_edges;  // same level, adjacent fingers
  Eigen::MatrixXd adjacency;                         // 21 x 21, no self loops
  Eigen::MatrixXd normalized;                        // D^-1/2 (A + I) D^-1/2
};

HandGraph build_hand_graph();

// Two-stage pooling: wrist kept, each finger's four joints averaged (6 x 21).
Eigen::MatrixXd finger_pooling_matrix();

// Sinusoidal position code for time index t in dimension d.
template <typename S>
Matrix<S> temporal_embedding(int t, int d) {
  Matrix<S> pe(1, d);
  for (int i = 0; 2 * i < d; ++i) {
    const double angle = t / std::pow(10000.0, 2.0 * i / d);
    pe(0, 2 * i) = static_cast<S>(std::sin(angle));
    if (2 * i + 1 < d) pe(0, 2 * i + 1) = static_cast<S>(std::cos(angle));
  }
  return pe;
}

struct EmbeddingConfig {
  int model_dim = 256;
  int gcn_hidden = 64;
  int gcn_out = 128;
};

// H' = relu(A_hat H W) applied to every 21-row block of `h`.
template <typename S>
Var<S> graph_conv(const Matrix<S>& a_hat, Var<S> h, Var<S> weight) {
  if (h.cols() <= weight.rows()) return relu(matmul(block_left_multiply(a_hat, h), weight));
  return relu(block_left_multiply(a_hat, matmul(h, weight)));
}

template <typename S>
class GestureEmbedding {
 public:
  GestureEmbedding() = default;
  GestureEmbedding(ParameterStore<S>& store, const EmbeddingConfig& c, Rng& rng)
      : a_hat_(build_hand_graph().normalized.cast<S>()), pool_(finger_pooling_matrix().cast<S>()), config_(c) {
    w1_ = store.add_weight("embed.gcn1.weight", 2, c.gcn_hidden, rng);
    w2_ = store.add_weight("embed.gcn2.weight", c.gcn_hidden, c.gcn_out, rng);
    proj_w_ = store.add_weight("embed.pool.weight", 6 * c.gcn_out, c.model_dim, rng);
    proj_b_ = store.add_zeros("embed.pool.bias", 1, c.model_dim);
  }

  // coords: n x 42 in model space -> n x d.
  Var<S> forward(ParameterBinding<S>& p, const Eigen::MatrixXd& coords) const {
    if (!coords.allFinite()) throw NumericError("gesture embedding: non-finite joint coordinates");
    const Eigen::Index n = coords.rows();
    Matrix<S> x(n * 21, 2);
    for (Eigen::Index t = 0; t < n; ++t)
      for (int j = 0; j < 21; ++j) {
        x(t * 21 + j, 0) = static_cast<S>(coords(t, 2 * j));
        x(t * 21 + j, 1) = static_cast<S>(coords(t, 2 * j + 1));
      }
    Graph<S>& g = p.graph();
    Var<S> h = graph_conv(a_hat_, g.constant(std::move(x)), p[w1_]);
    h = graph_conv(a_hat_, h, p[w2_]);
    Var<S> pooled = reshape(block_left_multiply(pool_, h), n, 6 * config_.gcn_out);
    return add_row(matmul(pooled, p[proj_w_]), p[proj_b_]);
  }

  int first_weight() const { return w1_; }
  int bias() const { return proj_b_; }
  const Matrix<S>& normalized_adjacency() const { return a_hat_; }

 private:
  Matrix<S> a_hat_;
  Matrix<S> pool_;
  EmbeddingConfig config_;
  int w1_ = -1, w2_ = -1, proj_w_ = -1, proj_b_ = -1;
};

// Learned two-row lookup table: row 0 'L', row 1 'R'.
template <typename S>
class ChiralityEmbedding {
 public:
  ChiralityEmbedding() = default;
  ChiralityEmbedding(ParameterStore<S>& store, int model_dim, Rng& rng) {
    table_ = store.add_weight("embed.chirality", 2, model_dim, rng);
  }
  Var<S> forward(ParameterBinding<S>& p, const std::vector<Chirality>& hands) const {
    std::vector<int> rows;
    rows.reserve(hands.size());
    for (Chirality c : hands) rows.push_back(static_cast<int>(c));
    return gather_rows(p[table_], std::move(rows));
  }
  int table() const { return table_; }

 private:
  int table_ = -1;
};

// F0 = f_p + f_o + f_h for every token.
template <typename S>
class TokenEmbedder {
 public:
  TokenEmbedder() = default;
  TokenEmbedder(ParameterStore<S>& store, const EmbeddingConfig& c, Rng& rng)
      : gesture_(store, c, rng), chirality_(store, c.model_dim, rng), model_dim_(c.model_dim) {}

  Var<S> forward(ParameterBinding<S>& p, const TokenSequence& tokens) const {
    if (static_cast<Eigen::Index>(tokens.time_index.size()) != tokens.token_count() ||
        static_cast<Eigen::Index>(tokens.chirality.size()) != tokens.token_count()) {
      throw std::invalid_argument("compose_tokens: per-token metadata length mismatch");
    }
    Graph<S>& g = p.graph();
    typename Graph<S>::Scope scope(g, "embedding");
    Var<S> fp = gesture_.forward(p, tokens.coords);
    Matrix<S> fo(tokens.token_count(), model_dim_);
    for (Eigen::Index i = 0; i < fo.rows(); ++i)
      fo.row(i) = temporal_embedding<S>(tokens.time_index[static_cast<std::size_t>(i)], model_dim_);
    Var<S> fh = chirality_.forward(p, tokens.chirality);
    return add(add(fp, g.constant(std::move(fo))), fh);
  }

  const GestureEmbedding<S>& gesture() const { return gesture_; }
  const ChiralityEmbedding<S>& chirality() const { return chirality_; }

 private:
  GestureEmbedding<S> gesture_;
  ChiralityEmbedding<S> chirality_;
  int model_dim_ = 0;
};

}  // namespace handmask
