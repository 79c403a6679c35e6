#include "handmask/pretrain.hpp"
#include "handmask/posedata.hpp"

#include "support.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace handmask;
using handmask::testing::random_matrix;

namespace {

TokenSequence random_tokens(int steps, Rng& rng) {
  TokenSequence t;
  t.steps = steps;
  t.coords = random_matrix(2 * steps, 2 * kHandJoints, rng, 0.4);
  t.confidence = (Eigen::MatrixXd::Random(2 * steps, kHandJoints).array() * 0.5 + 0.5).matrix();
  for (int h = 0; h < 2; ++h)
    for (int k = 0; k < steps; ++k) {
      t.time_index.push_back(k);
      t.chirality.push_back(static_cast<Chirality>(h));
    }
  return t;
}

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

std::vector<NormalizedSequence> small_dataset(int count) {
  SynthConfig c;
  c.class_count = 2;
  c.sequences_per_class = count / 2;
  c.sequence_length = 12;
  return normalize_all(synth_generate(c, asset()));
}

double run_once(std::uint64_t seed) {
  const auto data = small_dataset(10);
  PretrainConfig config;
  config.epochs = 1;
  config.frames = 4;
  Rng init(seed);
  HandMaskModel<double> model(micro_model(), init, true, 0, asset());
  TrainingState<double> state;
  state.rng = Rng(seed + 1);
  DataSplit split;
  for (int i = 0; i < 10; ++i) split.train.push_back(i);
  return pretrain_run(model, data, split, config, state).log.back().loss_total;
}

}  // namespace

TEST_CASE("masking statistics") {
  Rng rng(1);
  PretrainConfig c;
  const MaskPlan plan = plan_masking(100000, c, rng);
  int chosen = 0;
  std::array<int, 3> per{};
  for (const auto& t : plan.tokens) {
    if (!t.chosen) {
      CHECK(t.strategy == MaskStrategy::kNone);
      continue;
    }
    ++chosen;
    if (t.strategy == MaskStrategy::kJoint) ++per[0];
    if (t.strategy == MaskStrategy::kFrame) ++per[1];
    if (t.strategy == MaskStrategy::kIdentity) ++per[2];
  }
  CHECK(chosen == plan.chosen_count());
  CHECK(chosen / 1e5 >= 0.495);
  CHECK(chosen / 1e5 <= 0.505);
  CHECK(per[0] + per[1] + per[2] == chosen);
  for (int n : per) {
    CHECK(static_cast<double>(n) / chosen >= 0.323);
    CHECK(static_cast<double>(n) / chosen <= 0.343);
  }
}

TEST_CASE("joint strategy respects M and draws distinct joints") {
  Rng rng(2);
  PretrainConfig c;
  c.max_masked_joints = 3;
  std::array<int, 4> seen{};
  int disturb = 0, joint_tokens = 0;
  for (const auto& t : plan_masking(20000, c, rng).tokens) {
    if (t.strategy != MaskStrategy::kJoint) continue;
    ++joint_tokens;
    const int m = static_cast<int>(t.joints.size());
    REQUIRE(m >= 1);
    REQUIRE(m <= 3);
    ++seen[m];
    for (std::size_t i = 1; i < t.joints.size(); ++i) CHECK(t.joints[i] > t.joints[i - 1]);
    CHECK(t.joints.front() >= 0);
    CHECK(t.joints.back() < kHandJoints);
    if (t.corruption == JointCorruption::kDisturb) {
      ++disturb;
      CHECK(t.disturbance.size() == t.joints.size());
    } else {
      CHECK(t.disturbance.empty());
    }
  }
  for (int m = 1; m <= 3; ++m) CHECK(seen[m] > 0);
  CHECK(std::abs(static_cast<double>(disturb) / joint_tokens - 0.5) < 0.05);
}

TEST_CASE("apply_masking") {
  Rng rng(3);
  const TokenSequence tokens = random_tokens(3, rng);
  MaskPlan plan;
  plan.tokens.resize(6);
  plan.tokens[0].chosen = true;
  plan.tokens[0].strategy = MaskStrategy::kIdentity;
  plan.tokens[1].chosen = true;
  plan.tokens[1].strategy = MaskStrategy::kFrame;
  plan.tokens[2].chosen = true;
  plan.tokens[2].strategy = MaskStrategy::kJoint;
  plan.tokens[2].joints = {4, 8};
  plan.tokens[3].chosen = true;
  plan.tokens[3].strategy = MaskStrategy::kJoint;
  plan.tokens[3].corruption = JointCorruption::kDisturb;
  plan.tokens[3].joints = {1};
  plan.tokens[3].disturbance = {Eigen::Vector2d(0.25, -0.5)};
  const TokenSequence out = apply_masking(tokens, plan);
  CHECK(out.coords.row(0) == tokens.coords.row(0));
  CHECK(out.coords.row(1).isZero(0.0));
  for (int c = 0; c < 2 * kHandJoints; ++c) {
    const int j = c / 2;
    if (j == 4 || j == 8)
      CHECK(out.coords(2, c) == 0.0);
    else
      CHECK(out.coords(2, c) == tokens.coords(2, c));
  }
  CHECK(out.coords(3, 2) == tokens.coords(3, 2) + 0.25);
  CHECK(out.coords(3, 3) == tokens.coords(3, 3) - 0.5);
  CHECK(out.coords.bottomRows(2) == tokens.coords.bottomRows(2));
  CHECK(out.confidence == tokens.confidence);
  plan.tokens.pop_back();
  CHECK_THROWS_AS(apply_masking(tokens, plan), std::invalid_argument);
}

TEST_CASE("random masking never alters confidences") {
  Rng rng(4);
  PretrainConfig c;
  for (int i = 0; i < 50; ++i) {
    const TokenSequence tokens = random_tokens(8, rng);
    const TokenSequence out = apply_masking(tokens, plan_masking(tokens, c, rng));
    CHECK(out.confidence == tokens.confidence);
    CHECK(out.time_index == tokens.time_index);
    CHECK(out.chirality == tokens.chirality);
  }
}

TEST_CASE("reconstruction loss examples") {
  Graph<double> g;
  const Eigen::MatrixXd target = Eigen::MatrixXd::Zero(2, 42);
  Eigen::MatrixXd pred = target;
  Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(2, 21);
  SUBCASE("one chosen joint with confidence 0.8 and residual (3, 4)") {
    pred(0, 6) = 3.0;
    pred(0, 7) = -4.0;
    conf(0, 3) = 0.8;
    const auto w = reconstruction_weights(conf, {true, false}, 0.5);
    CHECK(loss_rec(g.constant(pred), target, w).value()(0, 0) == doctest::Approx(5.6).epsilon(1e-14));
  }
  SUBCASE("all confidences below the threshold") {
    pred.setConstant(7.0);
    conf.setConstant(0.4);
    CHECK(loss_rec(g.constant(pred), target, reconstruction_weights(conf, {true, true}, 0.5)).value()(0, 0) == 0.0);
  }
  SUBCASE("exact prediction") {
    conf.setOnes();
    CHECK(loss_rec(g.constant(pred), target, reconstruction_weights(conf, {true, true}, 0.5)).value()(0, 0) == 0.0);
  }
}

TEST_CASE("reconstruction loss ignores unchosen tokens and is non-negative") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence t = random_tokens(4, rng);
    const Eigen::MatrixXd pred = random_matrix(8, 42, rng);
    std::vector<bool> chosen(8);
    for (int i = 0; i < 8; ++i) chosen[i] = (i + trial) % 3 == 0;
    const Eigen::MatrixXd w = reconstruction_weights(t.confidence, chosen, 0.5);
    Graph<double> g;
    const double base = loss_rec(g.constant(pred), t.coords, w).value()(0, 0);
    CHECK(base >= 0.0);
    Eigen::MatrixXd moved = t.coords;
    for (int i = 0; i < 8; ++i)
      if (!chosen[i]) moved.row(i) += random_matrix(1, 42, rng).row(0);
    CHECK(loss_rec(g.constant(pred), moved, w).value()(0, 0) == base);
    // zero once every weighted coordinate matches
    Eigen::MatrixXd exact = pred;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (w(i) > 0) exact(i) = t.coords(i);
    CHECK(loss_rec(g.constant(exact), t.coords, w).value()(0, 0) == 0.0);
  }
}

TEST_CASE("regularisation loss") {
  Graph<double> g;
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(4, kLatentDims);  // two hands, T = 2
  CHECK(loss_reg(g.constant(z), 2, 10.0, 100.0).value()(0, 0) == 0.0);
  SUBCASE("hand-evaluated example") {
    z(0, kLatentPose) = 1.0;
    z(1, kLatentShape) = 1.0;
    CHECK(loss_reg(g.constant(z), 2, 10.0, 100.0).value()(0, 0) == doctest::Approx(111.0).epsilon(1e-14));
  }
  SUBCASE("constant shape has no derivative term") {
    z.col(kLatentShape).setConstant(0.5);
    CHECK(loss_reg(g.constant(z), 2, 10.0, 100.0).value()(0, 0) == doctest::Approx(4 * 10.0 * 0.25).epsilon(1e-14));
  }
  SUBCASE("hands are not chained together") {
    z.block(2, kLatentShape, 2, 1).setConstant(1.0);  // right hand only
    CHECK(loss_reg(g.constant(z), 2, 10.0, 100.0).value()(0, 0) == doctest::Approx(20.0).epsilon(1e-14));
  }
  SUBCASE("non-negative on random latents") {
    Rng rng(6);
    for (int i = 0; i < 10; ++i) CHECK(loss_reg(g.constant(random_matrix(4, kLatentDims, rng)), 2, 10.0, 100.0).value()(0, 0) > 0.0);
  }
  CHECK_THROWS_AS(loss_reg(g.constant(Eigen::MatrixXd::Zero(5, kLatentDims)), 2, 10.0, 100.0), std::invalid_argument);
}

TEST_CASE("total loss") {
  Graph<double> g;
  auto s = [&](double v) { return g.constant(Eigen::MatrixXd::Constant(1, 1, v)); };
  CHECK(total_loss(s(0), s(0), 0.01).value()(0, 0) == 0.0);
  CHECK(total_loss(s(1), s(100), 0.01).value()(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("full-stack gradient on a T=2 micro-model") {
  Rng rng(7);
  HandMaskModel<double> model(micro_model(), rng, true, 0, asset());
  const TokenSequence target = random_tokens(2, rng);
  PretrainConfig c;
  MaskPlan plan;
  do plan = plan_masking(target, c, rng);
  while (plan.chosen_count() == 0);
  const TokenSequence input = apply_masking(target, plan);
  auto loss = [&](ParameterBinding<double>& p) { return pretrain_forward(model, p, target, input, plan, c).total; };
  CHECK(handmask::testing::directional_gradient_error(model.parameters(), loss, 20, rng) < 1e-4);
}

TEST_CASE("pretraining smoke run and determinism") {
  const double a = run_once(11);
  CHECK(std::isfinite(a));
  CHECK(a > 0.0);
  CHECK(run_once(11) == a);
  CHECK(run_once(12) != a);
}

TEST_CASE("config validation") {
  PretrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.choose_rate = 0.0;
  CHECK_THROWS(c.validate());
  c = PretrainConfig{};
  c.confidence_threshold = 1.5;
  CHECK_THROWS(c.validate());
  c = PretrainConfig{};
  c.max_masked_joints = 0;
  CHECK_THROWS(c.validate());
}
