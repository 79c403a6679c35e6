#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace handmask {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Euclidean distance per row of two N x 2 joint arrays.
Eigen::VectorXd joint_distances(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth);

// Fraction of valid joints whose distance is <= tau.
double pck(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth, double tau, const std::vector<bool>& valid);
double pck_from_distances(const Eigen::VectorXd& distances, double tau);

struct PckCurve {
  std::vector<double> thresholds;  // ascending, pixels
  std::vector<double> values;
};

PckCurve pck_curve(const Eigen::VectorXd& distances, const std::vector<double>& thresholds);

// Trapezoid-rule area under the PCK curve sampled at the integer thresholds
// tau_min..tau_max, normalised by the range.
double auc(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth, const std::vector<bool>& valid,
           int tau_min = 20, int tau_max = 40);
double auc_from_distances(const Eigen::VectorXd& distances, int tau_min = 20, int tau_max = 40);

enum class TopkMode { kPerInstance, kPerClass };

// True label within the k best scores; ties go to the lower class index.
bool in_top_k(const Eigen::RowVectorXd& scores, int label, int k);

double topk_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels, int k, TopkMode mode);

}  // namespace handmask
