#include "handmask/finetune.hpp"
#include "handmask/metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <map>
#include <numeric>

using namespace handmask;
using handmask::testing::random_matrix;

namespace {

std::vector<bool> all_valid(int n) { return std::vector<bool>(static_cast<std::size_t>(n), true); }

// Brute-force top-k: count classes that beat the label, ties to the lower index.
bool oracle_top_k(const Eigen::RowVectorXd& s, int y, int k) {
  int better = 0;
  for (int c = 0; c < s.size(); ++c)
    if (s(c) > s(y) || (s(c) == s(y) && c < y)) ++better;
  return better < k;
}

double oracle_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels, int k, TopkMode mode) {
  std::map<int, std::pair<int, int>> per;  // hits, count
  int hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool hit = oracle_top_k(scores.row(static_cast<Eigen::Index>(i)), labels[i], k);
    hits += hit;
    per[labels[i]].first += hit;
    ++per[labels[i]].second;
  }
  if (mode == TopkMode::kPerInstance) return static_cast<double>(hits) / static_cast<double>(labels.size());
  double sum = 0.0;
  for (const auto& [c, hc] : per) sum += static_cast<double>(hc.first) / hc.second;
  return sum / static_cast<double>(per.size());
}

}  // namespace

TEST_CASE("pck examples") {
  Rng rng(1);
  const Eigen::MatrixXd truth = random_matrix(21, 2, rng, 50.0);
  CHECK(pck(truth, truth, 20.0, all_valid(21)) == 1.0);
  Eigen::MatrixXd shifted = truth;
  shifted.col(0).array() += 50.0;
  CHECK(pck(shifted, truth, 20.0, all_valid(21)) == 0.0);
  SUBCASE("seven of 21 inside, against a counting loop") {
    Eigen::MatrixXd pred = truth;
    for (int j = 0; j < 21; ++j) {
      const double r = j % 3 == 0 ? 15.0 : 25.0;
      const double a = 0.3 * j;
      pred(j, 0) += r * std::cos(a);
      pred(j, 1) += r * std::sin(a);
    }
    int inside = 0;
    for (int j = 0; j < 21; ++j) inside += (pred.row(j) - truth.row(j)).norm() <= 20.0;
    REQUIRE(inside == 7);
    CHECK(pck(pred, truth, 20.0, all_valid(21)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("validity mask") {
    std::vector<bool> valid(21, false);
    valid[2] = valid[5] = true;
    Eigen::MatrixXd pred = truth;
    pred(2, 0) += 100.0;
    CHECK(pck(pred, truth, 20.0, valid) == 0.5);
    CHECK_THROWS_AS(pck(pred, truth, 20.0, std::vector<bool>(21, false)), MetricError);
    CHECK_THROWS(pck(pred, truth, 20.0, std::vector<bool>(20, true)));
    CHECK_THROWS(pck(pred.topRows(20), truth, 20.0, all_valid(21)));
  }
}

TEST_CASE("pck is monotone in the threshold") {
  Rng rng(2);
  const Eigen::VectorXd d = random_matrix(200, 1, rng, 30.0).cwiseAbs();
  std::vector<double> taus;
  for (int t = 1; t <= 100; ++t) taus.push_back(t);
  const PckCurve curve = pck_curve(d, taus);
  REQUIRE(curve.values.size() == taus.size());
  CHECK(curve.thresholds == taus);
  for (std::size_t i = 1; i < curve.values.size(); ++i) CHECK(curve.values[i] >= curve.values[i - 1]);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    int n = 0;
    for (Eigen::Index k = 0; k < d.size(); ++k) n += d(k) <= taus[i];
    CHECK(curve.values[i] == static_cast<double>(n) / 200.0);
  }
}

TEST_CASE("auc") {
  Rng rng(3);
  const Eigen::MatrixXd truth = random_matrix(21, 2, rng, 50.0);
  CHECK(auc(truth, truth, all_valid(21)) == 1.0);
  Eigen::MatrixXd far = truth;
  far.col(1).array() += 50.0;
  CHECK(auc(far, truth, all_valid(21)) == 0.0);
  SUBCASE("distances linear in joint index against a fine-grid integral") {
    Eigen::VectorXd d(21);
    for (int j = 0; j < 21; ++j) d(j) = 15.0 + 1.5 * j;  // 15 .. 45
    // Midpoint rule on a 0.001-pixel grid over the same step-function PCK.
    double area = 0.0;
    const int steps = 20000;
    for (int i = 0; i < steps; ++i) {
      const double tau = 20.0 + (i + 0.5) * 20.0 / steps;
      int n = 0;
      for (int j = 0; j < 21; ++j) n += d(j) <= tau;
      area += static_cast<double>(n) / 21.0;
    }
    area /= steps;
    CHECK(std::abs(auc_from_distances(d) - area) < 0.01);
  }
  SUBCASE("bounded and equal to pck on a flat curve") {
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd d = random_matrix(30, 1, rng, 30.0).cwiseAbs();
      const double a = auc_from_distances(d);
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
    Eigen::VectorXd flat(4);
    flat << 1.0, 2.0, 100.0, 200.0;  // curve is 0.5 over [20, 40]
    CHECK(auc_from_distances(flat) == doctest::Approx(pck_from_distances(flat, 30.0)).epsilon(1e-15));
  }
  CHECK_THROWS(auc_from_distances(Eigen::VectorXd::Ones(3), 40, 20));
}

TEST_CASE("top-k examples") {
  SUBCASE("one-hot correct scores") {
    const std::vector<int> labels{0, 1, 2, 1};
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 3);
    for (int i = 0; i < 4; ++i) s(i, labels[i]) = 1.0;
    CHECK(topk_accuracy(s, labels, 1, TopkMode::kPerInstance) == 1.0);
    CHECK(topk_accuracy(s, labels, 1, TopkMode::kPerClass) == 1.0);
  }
  SUBCASE("imbalanced two-class case") {
    std::vector<int> labels(9, 0);
    labels.push_back(1);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(10, 2);
    s.col(0).setOnes();  // always predicts class 0
    CHECK(topk_accuracy(s, labels, 1, TopkMode::kPerInstance) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(topk_accuracy(s, labels, 1, TopkMode::kPerClass) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("k = K admits everything and k > K is an error") {
    Rng rng(4);
    const Eigen::MatrixXd s = random_matrix(12, 5, rng);
    std::vector<int> labels(12);
    for (int i = 0; i < 12; ++i) labels[i] = i % 5;
    CHECK(topk_accuracy(s, labels, 5, TopkMode::kPerInstance) == 1.0);
    CHECK(topk_accuracy(s, labels, 5, TopkMode::kPerClass) == 1.0);
    CHECK_THROWS_AS(topk_accuracy(s, labels, 6, TopkMode::kPerInstance), MetricError);
    labels[0] = 5;
    CHECK_THROWS(topk_accuracy(s, labels, 1, TopkMode::kPerInstance));
  }
  SUBCASE("ties go to the lower class index") {
    const Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(4);
    CHECK(in_top_k(s, 0, 1));
    CHECK(!in_top_k(s, 1, 1));
    CHECK(in_top_k(s, 1, 2));
    CHECK(!in_top_k(s, 3, 3));
  }
}

TEST_CASE("top-k against the brute-force oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int k_classes = 2 + trial % 9;
    const int n = 5 + trial;
    // coarse scores so ties actually occur
    const Eigen::MatrixXd s = random_matrix(n, k_classes, rng).array().round();
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::uniform_int_distribution<int> pick(0, k_classes - 1);
    for (int& y : labels) y = pick(rng);
    double previous_pi = 0.0, previous_pc = 0.0;
    for (int k = 1; k <= k_classes; ++k) {
      const double pi = topk_accuracy(s, labels, k, TopkMode::kPerInstance);
      const double pc = topk_accuracy(s, labels, k, TopkMode::kPerClass);
      CHECK(pi == doctest::Approx(oracle_accuracy(s, labels, k, TopkMode::kPerInstance)).epsilon(1e-15));
      CHECK(pc == doctest::Approx(oracle_accuracy(s, labels, k, TopkMode::kPerClass)).epsilon(1e-15));
      CHECK(pi >= previous_pi);
      CHECK(pc >= previous_pc);
      previous_pi = pi;
      previous_pc = pc;
    }
  }
}

TEST_CASE("per-class equals per-instance on balanced data") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int classes = 2 + trial % 6, per = 1 + trial % 4;
    const Eigen::MatrixXd s = random_matrix(classes * per, classes, rng);
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < per; ++i) labels.push_back(c);
    for (int k = 1; k <= classes; ++k)
      CHECK(topk_accuracy(s, labels, k, TopkMode::kPerClass) ==
            doctest::Approx(topk_accuracy(s, labels, k, TopkMode::kPerInstance)).epsilon(1e-15));
  }
}

TEST_CASE("classification report") {
  const std::vector<int> labels{0, 0, 1, 2};
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 3);
  s(0, 0) = s(1, 1) = s(2, 1) = s(3, 2) = 1.0;
  const ClassificationMetrics m = classification_metrics(s, labels);
  CHECK(m.top1_pi == doctest::Approx(0.75));
  CHECK(m.top1_pc == doctest::Approx((0.5 + 1.0 + 1.0) / 3.0));
  CHECK(m.top5_pi == 1.0);  // k capped at K = 3
  CHECK(m.per_class_counts.at(0) == 2);
  const auto j = m.to_json();
  for (const char* key : {"top1_pi", "top5_pi", "top1_pc", "top5_pc", "per_class_counts"}) CHECK(j.contains(key));
}
