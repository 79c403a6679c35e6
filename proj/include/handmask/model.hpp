#pragma once

#include "handmask/embedding.hpp"
#include "handmask/encoder.hpp"
#include "handmask/handmodel.hpp"
#include "handmask/parameters.hpp"
#include "handmask/tokens.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace handmask {

struct ModelConfig {
  int model_dim = 256;
  int gcn_hidden = 64;
  int gcn_out = 128;
  int layers = 3;
  int heads = 4;
  int ff_dim = 1024;
  double dropout = 0.1;
  std::string asset_path;       // empty: bundled synthetic asset
  std::uint64_t asset_seed = 1;

  EmbeddingConfig embedding() const { return {model_dim, gcn_hidden, gcn_out}; }
  EncoderConfig encoder() const { return {layers, heads, model_dim, ff_dim, dropout}; }
  void validate() const {
    encoder().validate();
    if (gcn_hidden < 1 || gcn_out < 1) throw std::invalid_argument("model.gcn widths must be >= 1");
  }
};

// Resolves the configured asset: a file when a path is set, otherwise the
// procedural default.
HandModelAsset resolve_asset(const ModelConfig& config);

// Temporal attention pooling followed by a linear classifier.
template <typename S>
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(ParameterStore<S>& store, int model_dim, int classes, Rng& rng) : classes_(classes) {
    if (classes < 1) throw std::invalid_argument("prediction head needs at least one class");
    scorer_w_ = store.add_weight("head.scorer.weight", model_dim, 1, rng);
    scorer_b_ = store.add_zeros("head.scorer.bias", 1, 1);
    cls_w_ = store.add_weight("head.classifier.weight", model_dim, classes, rng);
    cls_b_ = store.add_zeros("head.classifier.bias", 1, classes);
  }

  // alpha = softmax over tokens of scorer(F); returns sum_t alpha_t F[t] (1 x d).
  Var<S> attention_pool(ParameterBinding<S>& p, Var<S> features, Matrix<S>* alpha_out = nullptr) const {
    Var<S> scores = add_row(matmul(features, p[scorer_w_]), p[scorer_b_]);
    Var<S> alpha = softmax_rows(transpose(scores));
    if (alpha_out) *alpha_out = alpha.value();
    return matmul(alpha, features);
  }

  Var<S> classify(ParameterBinding<S>& p, Var<S> clip) const { return add_row(matmul(clip, p[cls_w_]), p[cls_b_]); }

  int classes() const { return classes_; }
  int scorer_weight() const { return scorer_w_; }

 private:
  int classes_ = 0;
  int scorer_w_ = -1, scorer_b_ = -1, cls_w_ = -1, cls_b_ = -1;
};

// Embedding + encoder, with the hand-model-aware decoder for pretraining
// and/or the prediction head for recognition.
template <typename S>
class HandMaskModel {
 public:
  HandMaskModel(const ModelConfig& config, Rng& rng, bool with_decoder, int classes,
                std::optional<HandModelAsset> asset = std::nullopt)
      : config_(config) {
    config.validate();
    embedder_ = TokenEmbedder<S>(store_, config.embedding(), rng);
    encoder_ = Encoder<S>(store_, config.encoder(), rng);
    if (with_decoder) {
      latent_head_ = LatentHead<S>::create(store_, config.model_dim, rng);
      tables_ = DecoderTables<S>::from_asset(asset ? *asset : resolve_asset(config));
    }
    if (classes > 0) head_ = PredictionHead<S>(store_, config.model_dim, classes, rng);
  }

  Var<S> encode(ParameterBinding<S>& p, const TokenSequence& tokens, DropoutContext* drop = nullptr,
                std::vector<Matrix<S>>* attention = nullptr) const {
    return encoder_.forward(p, embedder_.forward(p, tokens), drop, attention);
  }

  // Latent frames for the given feature rows (n x 41).
  Var<S> latent(ParameterBinding<S>& p, Var<S> features) const {
    require_decoder();
    typename Graph<S>::Scope scope(p.graph(), "decoder");
    return latent_head_->forward(p, features);
  }

  // Projected joints (n x 42) for latent rows.
  Var<S> decode(Var<S> latent_rows) const {
    require_decoder();
    return decode_latent_rows(latent_rows, *tables_);
  }

  Var<S> logits(ParameterBinding<S>& p, Var<S> features, Matrix<S>* alpha_out = nullptr) const {
    if (!head_) throw std::logic_error("model has no prediction head");
    return head_->classify(p, head_->attention_pool(p, features, alpha_out));
  }

  bool has_decoder() const { return latent_head_.has_value(); }
  bool has_head() const { return head_.has_value(); }
  int classes() const { return head_ ? head_->classes() : 0; }
  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }
  const TokenEmbedder<S>& embedder() const { return embedder_; }
  const DecoderTables<S>& tables() const { return *tables_; }

 private:
  void require_decoder() const {
    if (!latent_head_) throw std::logic_error("model has no hand-model decoder");
  }

  ModelConfig config_;
  ParameterStore<S> store_;
  TokenEmbedder<S> embedder_;
  Encoder<S> encoder_;
  std::optional<LatentHead<S>> latent_head_;
  std::optional<DecoderTables<S>> tables_;
  std::optional<PredictionHead<S>> head_;
};

}  // namespace handmask
