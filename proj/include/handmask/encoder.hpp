#pragma once

#include "handmask/autodiff.hpp"
#include "handmask/parameters.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace handmask {

struct EncoderConfig {
  int layers = 3;
  int heads = 4;
  int model_dim = 256;
  int ff_dim = 1024;
  double dropout = 0.1;

  void validate() const {
    if (layers < 1) throw std::invalid_argument("encoder.layers must be >= 1");
    if (heads < 1 || model_dim % heads != 0) throw std::invalid_argument("encoder.model_dim must be divisible by encoder.heads");
    if (ff_dim < 1) throw std::invalid_argument("encoder.ff_dim must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder.dropout must lie in [0,1)");
  }
};

// Inverted dropout; a null context or zero rate is the identity.
struct DropoutContext {
  Rng* rng = nullptr;
  double rate = 0.0;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

template <typename S>
Var<S> dropout(Var<S> x, DropoutContext* ctx) {
  if (ctx == nullptr || !ctx->active()) return x;
  std::bernoulli_distribution keep(1.0 - ctx->rate);
  const S scale = static_cast<S>(1.0 / (1.0 - ctx->rate));
  Matrix<S> mask(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(*ctx->rng) ? scale : S(0);
  return mask_multiply(x, std::move(mask));
}

// softmax(Q K^T / sqrt(d_k)) V for one head. Optionally reports the weights.
template <typename S>
Var<S> scaled_dot_attention(Var<S> q, Var<S> k, Var<S> v, Matrix<S>* weights_out = nullptr) {
  if (q.cols() != k.cols()) throw std::invalid_argument("attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value length mismatch");
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  Var<S> weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
  if (weights_out) *weights_out = weights.value();
  return matmul(weights, v);
}

template <typename S>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore<S>& store, const EncoderConfig& c, int index, Rng& rng) : heads_(c.heads) {
    const std::string p = "encoder.layer" + std::to_string(index) + ".";
    const int d = c.model_dim;
    wq_ = store.add_weight(p + "attn.wq", d, d, rng);
    bq_ = store.add_zeros(p + "attn.bq", 1, d);
    wk_ = store.add_weight(p + "attn.wk", d, d, rng);
    bk_ = store.add_zeros(p + "attn.bk", 1, d);
    wv_ = store.add_weight(p + "attn.wv", d, d, rng);
    bv_ = store.add_zeros(p + "attn.bv", 1, d);
    wo_ = store.add_weight(p + "attn.wo", d, d, rng);
    bo_ = store.add_zeros(p + "attn.bo", 1, d);
    ln1_g_ = store.add_ones(p + "ln1.gain", 1, d);
    ln1_b_ = store.add_zeros(p + "ln1.bias", 1, d);
    ff1_w_ = store.add_weight(p + "ff.w1", d, c.ff_dim, rng);
    ff1_b_ = store.add_zeros(p + "ff.b1", 1, c.ff_dim);
    ff2_w_ = store.add_weight(p + "ff.w2", c.ff_dim, d, rng);
    ff2_b_ = store.add_zeros(p + "ff.b2", 1, d);
    ln2_g_ = store.add_ones(p + "ln2.gain", 1, d);
    ln2_b_ = store.add_zeros(p + "ln2.bias", 1, d);
  }

  // Multi-head self-attention: heads concatenated then mixed by W_o.
  Var<S> attention(ParameterBinding<S>& p, Var<S> x, std::vector<Matrix<S>>* weights_out = nullptr) const {
    Var<S> q = add_row(matmul(x, p[wq_]), p[bq_]);
    Var<S> k = add_row(matmul(x, p[wk_]), p[bk_]);
    Var<S> v = add_row(matmul(x, p[wv_]), p[bv_]);
    const Eigen::Index dk = x.cols() / heads_;
    std::vector<Var<S>> outs;
    for (int h = 0; h < heads_; ++h) {
      Matrix<S> w;
      outs.push_back(scaled_dot_attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk),
                                          slice_cols(v, h * dk, dk), weights_out ? &w : nullptr));
      if (weights_out) weights_out->push_back(std::move(w));
    }
    Var<S> merged = heads_ == 1 ? outs.front() : concat_cols(outs);
    return add_row(matmul(merged, p[wo_]), p[bo_]);
  }

  // Post-norm block: L(M(x) + x), then L(C(.) + .).
  Var<S> forward(ParameterBinding<S>& p, Var<S> x, DropoutContext* drop,
                 std::vector<Matrix<S>>* weights_out = nullptr) const {
    Var<S> attended = dropout(attention(p, x, weights_out), drop);
    Var<S> mid = layer_norm_rows(add(attended, x), p[ln1_g_], p[ln1_b_]);
    Var<S> hidden = relu(add_row(matmul(mid, p[ff1_w_]), p[ff1_b_]));
    Var<S> ff = dropout(add_row(matmul(hidden, p[ff2_w_]), p[ff2_b_]), drop);
    return layer_norm_rows(add(ff, mid), p[ln2_g_], p[ln2_b_]);
  }

 private:
  int heads_ = 1;
  int wq_ = -1, bq_ = -1, wk_ = -1, bk_ = -1, wv_ = -1, bv_ = -1, wo_ = -1, bo_ = -1;
  int ln1_g_ = -1, ln1_b_ = -1, ff1_w_ = -1, ff1_b_ = -1, ff2_w_ = -1, ff2_b_ = -1, ln2_g_ = -1, ln2_b_ = -1;
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore<S>& store, const EncoderConfig& c, Rng& rng) : config_(c) {
    c.validate();
    for (int i = 0; i < c.layers; ++i) layers_.emplace_back(store, c, i, rng);
  }

  // (2T, d) -> (2T, d). `weights_out` collects layer-major, head-minor
  // attention matrices when given.
  Var<S> forward(ParameterBinding<S>& p, Var<S> x, DropoutContext* drop = nullptr,
                 std::vector<Matrix<S>>* weights_out = nullptr) const {
    if (x.cols() != config_.model_dim) throw std::invalid_argument("encode: input width differs from model_dim");
    Graph<S>& g = p.graph();
    x = dropout(x, drop);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      typename Graph<S>::Scope scope(g, "encoder.layer" + std::to_string(i));
      x = layers_[i].forward(p, x, drop, weights_out);
    }
    return x;
  }

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::vector<EncoderLayer<S>> layers_;
};

}  // namespace handmask
