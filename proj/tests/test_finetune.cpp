#include "handmask/checkpoint.hpp"
#include "handmask/finetune.hpp"
#include "handmask/posedata.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace handmask;
using handmask::testing::random_matrix;

namespace {

ModelConfig micro_model() {
  ModelConfig c;
  c.model_dim = 16;
  c.gcn_hidden = 8;
  c.gcn_out = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff_dim = 16;
  c.dropout = 0.0;
  return c;
}

const HandModelAsset& asset() {
  static const HandModelAsset a = synth_asset(1);
  return a;
}

double ce(const Eigen::RowVectorXd& z, int label) {
  Graph<double> g;
  return cross_entropy(g.constant(z), label).value()(0, 0);
}

}  // namespace

TEST_CASE("attention pooling") {
  Rng rng(1);
  ParameterStore<double> store;
  PredictionHead<double> head(store, 6, 3, rng);
  Graph<double> g;
  ParameterBinding<double> p(g, store, false);
  SUBCASE("one token") {
    const Eigen::MatrixXd f = random_matrix(1, 6, rng);
    CHECK((head.attention_pool(p, g.constant(f)).value() - f).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero scorer gives the mean") {
    store.value(head.scorer_weight()).setZero();
    const Eigen::MatrixXd f = random_matrix(8, 6, rng);
    Matrix<double> alpha;
    const Eigen::MatrixXd out = head.attention_pool(p, g.constant(f), &alpha).value();
    CHECK((alpha.array() - 1.0 / 8).abs().maxCoeff() < 1e-15);
    CHECK((out - f.colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("a +20 logit saturates onto one token") {
    // scorer reads the first feature; only token 3 has a large one
    store.value(head.scorer_weight()).setZero();
    store.value(head.scorer_weight())(0, 0) = 1.0;
    Eigen::MatrixXd f = random_matrix(6, 6, rng, 0.01);
    f.col(0).setZero();
    f(3, 0) = 20.0;
    const Eigen::MatrixXd out = head.attention_pool(p, g.constant(f)).value();
    // residual weight is about 5 * e^-20 on features of size 0.01 (20 on column 0)
    CHECK((out - f.row(3)).cwiseAbs().maxCoeff() < 1e-6 * 20.0);
    CHECK((out.rightCols(5) - f.row(3).rightCols(5)).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("weights form a distribution and the output lies in the hull") {
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd f = random_matrix(10, 6, rng);
      Matrix<double> alpha;
      const Eigen::MatrixXd out = head.attention_pool(p, g.constant(f), &alpha).value();
      CHECK(alpha.minCoeff() >= 0.0);
      CHECK(std::abs(alpha.sum() - 1.0) < 1e-12);
      CHECK((out - alpha * f).cwiseAbs().maxCoeff() < 1e-12);
      for (int c = 0; c < 6; ++c) {
        CHECK(out(0, c) <= f.col(c).maxCoeff() + 1e-12);
        CHECK(out(0, c) >= f.col(c).minCoeff() - 1e-12);
      }
    }
  }
}

TEST_CASE("cross-entropy") {
  CHECK(ce(Eigen::RowVectorXd::Zero(10), 3) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  Eigen::RowVectorXd sat = Eigen::RowVectorXd::Zero(4);
  double previous = ce(sat, 2);
  for (double m : {5.0, 10.0, 20.0}) {
    sat(2) = m;
    const double l = ce(sat, 2);
    CHECK(l < previous);
    CHECK(l > 0.0);
    previous = l;
  }
  sat(2) = 40.0;  // rounds to the limit in double precision
  CHECK(ce(sat, 2) < 1e-16);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Eigen::RowVectorXd z = random_matrix(1, 7, rng, 3.0);
    const int y = i % 7;
    const double direct = -std::log(std::exp(z(y)) / z.array().exp().sum());
    CHECK(ce(z, y) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(ce(z, y) >= 0.0);
  }
  CHECK_THROWS(ce(Eigen::RowVectorXd::Zero(3), 3));
  CHECK_THROWS(ce(Eigen::RowVectorXd::Zero(3), -1));
}

TEST_CASE("logit fusion") {
  Rng rng(3);
  const Eigen::RowVectorXd a = random_matrix(1, 5, rng), b = random_matrix(1, 5, rng), c = random_matrix(1, 5, rng);
  CHECK(fuse_logits(a, Eigen::RowVectorXd::Zero(5)) == a);
  CHECK(fuse_logits(a, b) == fuse_logits(b, a));
  CHECK((fuse_logits(fuse_logits(a, b), c) - fuse_logits(a, fuse_logits(b, c))).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS(fuse_logits(a, Eigen::RowVectorXd::Zero(4)));
  SUBCASE("streams that disagree") {
    // a favours class 0, b favours class 2; summed: (3.5, 3.0, 4.0) -> class 2
    const Eigen::RowVectorXd x = (Eigen::RowVectorXd(3) << 3.0, 1.0, 0.5).finished();
    const Eigen::RowVectorXd y = (Eigen::RowVectorXd(3) << 0.5, 2.0, 3.5).finished();
    Eigen::Index arg;
    const Eigen::RowVectorXd f = fuse_logits(x, y);
    CHECK(f == (Eigen::RowVectorXd(3) << 3.5, 3.0, 4.0).finished());
    f.maxCoeff(&arg);
    CHECK(arg == 2);
  }
  SUBCASE("probability mode softmaxes each stream") {
    const Eigen::RowVectorXd f = fuse_logits(a, b, FusionMode::kProbabilities);
    const Eigen::RowVectorXd pa = a.array().exp() / a.array().exp().sum();
    const Eigen::RowVectorXd pb = b.array().exp() / b.array().exp().sum();
    CHECK((f - pa - pb).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(std::abs(f.sum() - 2.0) < 1e-12);
  }
}

TEST_CASE("scratch fine-tuning on random labels stays above the chance floor") {
  SynthConfig sc;
  sc.class_count = 4;
  sc.sequences_per_class = 15;
  sc.sequence_length = 10;
  auto data = normalize_all(synth_generate(sc, asset()));
  Rng label_rng(4);
  std::uniform_int_distribution<int> label(0, 3);
  for (auto& s : data) s.label = label(label_rng);
  std::vector<std::optional<int>> labels;
  for (const auto& s : data) labels.push_back(s.label);
  Rng split_rng(5), init(6);
  const DataSplit split = split_per_class(labels, 5, split_rng);
  FinetuneConfig fc;
  fc.epochs = 3;
  fc.frames = 4;
  HandMaskModel<double> model(micro_model(), init, false, 4);
  TrainingState<double> state;
  state.rng = Rng(7);
  const FinetuneResult r = finetune_run(model, data, split, fc, state);
  REQUIRE(r.log.size() == 3);
  for (const auto& e : r.log) CHECK(std::isfinite(e.loss));
  const double n = static_cast<double>(split.heldout.size());
  CHECK(r.heldout_labels.size() == split.heldout.size());
  CHECK(r.heldout_scores.rows() == static_cast<Eigen::Index>(n));
  CHECK(r.metrics.top1_pi >= 0.25 - 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST_CASE("fine-tuning model carries no decoder parameters") {
  Rng init(8);
  HandMaskModel<float> model(micro_model(), init, false, 3);
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    CHECK(model.parameters().name(static_cast<int>(i)).rfind("decoder.", 0) == std::string::npos);
  Rng init2(8);
  HandMaskModel<double> with_decoder(micro_model(), init2, true, 3, asset());
  std::vector<NormalizedSequence> data;
  FinetuneConfig fc;
  TrainingState<double> state;
  CHECK_THROWS_AS(finetune_run(with_decoder, data, DataSplit{{0}, {}}, fc, state), std::invalid_argument);
}

TEST_CASE("loading a pretraining checkpoint restores the encoder bitwise") {
  Rng pre_init(9);
  HandMaskModel<float> pretrained(micro_model(), pre_init, true, 0, asset());
  for (std::size_t i = 0; i < pretrained.parameters().size(); ++i) {
    Rng noise(100 + i);
    auto& v = pretrained.parameters().value(static_cast<int>(i));
    v += random_matrix(v.rows(), v.cols(), noise).cast<float>();
  }
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(capture_checkpoint(pretrained, nullptr)));
  CHECK(!checkpoint_head_classes(ck));
  Rng ft_init(10);
  HandMaskModel<float> tuned(micro_model(), ft_init, false, 5);
  restore_parameters(tuned, ck, {"embed.", "encoder."});
  int restored = 0;
  for (std::size_t i = 0; i < tuned.parameters().size(); ++i) {
    const std::string& name = tuned.parameters().name(static_cast<int>(i));
    if (name.rfind("head.", 0) == 0) continue;
    const auto src = pretrained.parameters().find(name);
    REQUIRE(src);
    CHECK(tuned.parameters().value(static_cast<int>(i)) == pretrained.parameters().value(*src));
    ++restored;
  }
  CHECK(restored > 0);
}
