#include "handmask/metrics.hpp"

#include <map>
#include <string>

namespace handmask {

Eigen::VectorXd joint_distances(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != 2 || truth.cols() != 2)
    throw MetricError("joint arrays must both be N x 2 with equal N");
  return (predicted - truth).rowwise().norm();
}

double pck_from_distances(const Eigen::VectorXd& distances, double tau) {
  if (!(tau > 0.0)) throw MetricError("pck threshold must be positive");
  if (distances.size() == 0) throw MetricError("pck undefined: no valid joints");
  return static_cast<double>((distances.array() <= tau).count()) / static_cast<double>(distances.size());
}

namespace {

Eigen::VectorXd valid_distances(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth,
                                const std::vector<bool>& valid) {
  const Eigen::VectorXd all = joint_distances(predicted, truth);
  if (static_cast<Eigen::Index>(valid.size()) != all.size()) throw MetricError("validity mask length differs from joint count");
  std::vector<double> kept;
  for (Eigen::Index i = 0; i < all.size(); ++i)
    if (valid[static_cast<std::size_t>(i)]) kept.push_back(all(i));
  return Eigen::Map<Eigen::VectorXd>(kept.data(), static_cast<Eigen::Index>(kept.size()));
}

}  // namespace

double pck(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth, double tau, const std::vector<bool>& valid) {
  return pck_from_distances(valid_distances(predicted, truth, valid), tau);
}

PckCurve pck_curve(const Eigen::VectorXd& distances, const std::vector<double>& thresholds) {
  PckCurve curve;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (i > 0 && thresholds[i] <= thresholds[i - 1]) throw MetricError("pck curve thresholds must ascend");
    curve.thresholds.push_back(thresholds[i]);
    curve.values.push_back(pck_from_distances(distances, thresholds[i]));
  }
  return curve;
}

double auc_from_distances(const Eigen::VectorXd& distances, int tau_min, int tau_max) {
  if (tau_min >= tau_max) throw MetricError("auc needs tau_min < tau_max");
  std::vector<double> taus;
  for (int t = tau_min; t <= tau_max; ++t) taus.push_back(t);
  const PckCurve curve = pck_curve(distances, taus);
  double area = 0.0;
  for (std::size_t i = 1; i < taus.size(); ++i) area += 0.5 * (curve.values[i] + curve.values[i - 1]) * (taus[i] - taus[i - 1]);
  return area / (tau_max - tau_min);
}

double auc(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth, const std::vector<bool>& valid, int tau_min,
           int tau_max) {
  return auc_from_distances(valid_distances(predicted, truth, valid), tau_min, tau_max);
}

bool in_top_k(const Eigen::RowVectorXd& scores, int label, int k) {
  int ahead = 0;
  for (Eigen::Index j = 0; j < scores.size(); ++j)
    if (scores(j) > scores(label) || (scores(j) == scores(label) && j < label)) ++ahead;
  return ahead < k;
}

double topk_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels, int k, TopkMode mode) {
  const Eigen::Index classes = scores.cols();
  if (k < 1 || k > classes) throw MetricError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) throw MetricError("top-k: label count differs from score rows");
  if (labels.empty()) throw MetricError("top-k: no samples");
  std::map<int, std::pair<int, int>> per_class;  // label -> (hits, count)
  int hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) throw MetricError("top-k: label " + std::to_string(y) + " out of range");
    const bool hit = in_top_k(scores.row(static_cast<Eigen::Index>(i)), y, k);
    hits += hit;
    per_class[y].first += hit;
    per_class[y].second += 1;
  }
  if (mode == TopkMode::kPerInstance) return static_cast<double>(hits) / static_cast<double>(labels.size());
  double total = 0.0;
  for (const auto& [y, hc] : per_class) total += static_cast<double>(hc.first) / hc.second;
  return total / static_cast<double>(per_class.size());
}

}  // namespace handmask
