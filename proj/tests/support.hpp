#pragma once

#include "handmask/handmodel.hpp"
#include "handmask/parameters.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace handmask::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using LossFn = std::function<Var<double>(ParameterBinding<double>&)>;

inline double evaluate_loss(ParameterStore<double>& store, const LossFn& loss) {
  Graph<double> g;
  ParameterBinding<double> p(g, store, false);
  return loss(p).value()(0, 0);
}

inline std::vector<Matrix<double>> gradients(ParameterStore<double>& store, const LossFn& loss) {
  Graph<double> g;
  ParameterBinding<double> p(g, store, true);
  Var<double> l = loss(p);
  g.backward(l);
  auto grads = store.zeros_like();
  p.accumulate_gradients(grads);
  return grads;
}

// Largest relative error between the reverse-mode directional derivative and
// a central difference along `directions` random unit directions.
inline double directional_gradient_error(ParameterStore<double>& store, const LossFn& loss, int directions, Rng& rng,
                                         double step = 1e-6) {
  const auto grads = gradients(store, loss);
  double worst = 0.0;
  for (int d = 0; d < directions; ++d) {
    std::vector<Eigen::MatrixXd> u;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) {
      u.push_back(random_matrix(store.value(static_cast<int>(i)).rows(), store.value(static_cast<int>(i)).cols(), rng));
      norm2 += u.back().squaredNorm();
    }
    double analytic = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) {
      u[i] /= std::sqrt(norm2);
      analytic += grads[i].cwiseProduct(u[i]).sum();
    }
    const auto saved = store.values();
    for (std::size_t i = 0; i < store.size(); ++i) store.value(static_cast<int>(i)) = saved[i] + step * u[i];
    const double plus = evaluate_loss(store, loss);
    for (std::size_t i = 0; i < store.size(); ++i) store.value(static_cast<int>(i)) = saved[i] - step * u[i];
    const double minus = evaluate_loss(store, loss);
    store.values() = saved;
    worst = std::max(worst, relative_error(analytic, (plus - minus) / (2.0 * step)));
  }
  return worst;
}

// Central differences per input element; the error is relative in the
// Frobenius norm of each input's gradient.
using MatrixFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline double elementwise_gradient_error(std::vector<Eigen::MatrixXd> inputs, const MatrixFn& f, double step = 1e-6) {
  auto eval = [&](const std::vector<Eigen::MatrixXd>& xs) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(g.constant(x));
    return f(g, vars).value()(0, 0);
  };
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(g.variable(x));
  Var<double> out = f(g, vars);
  g.backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Eigen::MatrixXd grad = g.grad(vars[k]);
    Eigen::MatrixXd numeric(grad.rows(), grad.cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k](i);
      inputs[k](i) = keep + step;
      const double plus = eval(inputs);
      inputs[k](i) = keep - step;
      const double minus = eval(inputs);
      inputs[k](i) = keep;
      numeric(i) = (plus - minus) / (2.0 * step);
    }
    worst = std::max(worst, (grad - numeric).norm() / std::max({grad.norm(), numeric.norm(), 1e-8}));
  }
  return worst;
}

// Two-bone chain on the first finger: wrist (joint 0) -> joint 1 -> joint 2,
// with the PCA pose coefficient 0 bending joint 2 about z. The remaining
// articulated joints sit at the wrist and carry no skin.
//   vertex 0 at (0.5, 0, 0) bound to joint 0
//   vertex 1 at (1.5, 0, 0) bound to joint 1
//   vertex 2 at (2.5, 0, 0) bound to joint 2
//   vertex 3 at (2.5, 0.5, 0) split 50/50 between joints 1 and 2
inline HandModelAsset two_bone_asset() {
  HandModelAsset a;
  a.template_vertices.resize(4, 3);
  a.template_vertices << 0.5, 0, 0, 1.5, 0, 0, 2.5, 0, 0, 2.5, 0.5, 0;
  a.faces.resize(1, 3);
  a.faces << 0, 1, 2;
  a.shape_basis = Eigen::MatrixXd::Zero(12, kShapeDims);
  a.pose_basis = Eigen::MatrixXd::Zero(12, kJointAngleDims);
  a.pose_pca = Eigen::MatrixXd::Zero(kJointAngleDims, kPcaDims);
  a.pose_pca(3 * (2 - 1) + 2, 0) = 1.0;  // joint 2, z component
  // Joint 0 at the origin, joint 1 at x=1, joint 2 at x=2. Each regressor row
  // mixes vertices so that the row sums to 1.
  a.joint_regressor = Eigen::MatrixXd::Zero(kArticulatedJoints, 4);
  for (int k = 0; k < kArticulatedJoints; ++k) {
    if (k == 1) {
      a.joint_regressor(k, 0) = 0.5;
      a.joint_regressor(k, 1) = 0.5;  // (1, 0, 0)
    } else if (k == 2) {
      a.joint_regressor(k, 1) = 0.5;
      a.joint_regressor(k, 2) = 0.5;  // (2, 0, 0)
    } else {
      a.joint_regressor(k, 0) = 1.5;
      a.joint_regressor(k, 1) = -0.5;  // (0, 0, 0)
    }
  }
  a.skinning = Eigen::MatrixXd::Zero(4, kArticulatedJoints);
  a.skinning(0, 0) = 1.0;
  a.skinning(1, 1) = 1.0;
  a.skinning(2, 2) = 1.0;
  a.skinning(3, 1) = 0.5;
  a.skinning(3, 2) = 0.5;
  a.fingertips = {2, 2, 2, 2, 2};
  return a;
}

// Hand-computed posed vertices of two_bone_asset for a bend of `angle` about
// z at joint 2: points bound to joint 2 rotate about (2, 0, 0).
inline Eigen::MatrixXd two_bone_expected(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  auto about_joint2 = [&](double x, double y) {
    const double dx = x - 2.0, dy = y;
    return Eigen::Vector3d(2.0 + c * dx - s * dy, s * dx + c * dy, 0.0);
  };
  Eigen::MatrixXd out(4, 3);
  out.row(0) = Eigen::RowVector3d(0.5, 0, 0);
  out.row(1) = Eigen::RowVector3d(1.5, 0, 0);
  out.row(2) = about_joint2(2.5, 0.0).transpose();
  out.row(3) = 0.5 * Eigen::RowVector3d(2.5, 0.5, 0) + 0.5 * about_joint2(2.5, 0.5).transpose();
  return out;
}

}  // namespace handmask::testing
