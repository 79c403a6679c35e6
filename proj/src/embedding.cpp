#include "handmask/embedding.hpp"

namespace handmask {

HandGraph build_hand_graph() {
  HandGraph g;
  // Joint order: wrist, then thumb, index, middle, ring, pinky (base -> tip).
  for (int f = 0; f < 5; ++f) {
    const int base = 1 + 4 * f;
    g.physical_edges.emplace_back(0, base);
    for (int l = 0; l < 3; ++l) g.physical_edges.emplace_back(base + l, base + l + 1);
  }
  // Same-level links between neighbouring fingers on the three non-tip levels.
  for (int f = 0; f + 1 < 5; ++f)
    for (int l = 0; l < 3; ++l) g.symmetric_edges.emplace_back(1 + 4 * f + l, 1 + 4 * (f + 1) + l);

  g.adjacency = Eigen::MatrixXd::Zero(21, 21);
  for (const auto* edges : {&g.physical_edges, &g.symmetric_edges})
    for (auto [a, b] : *edges) g.adjacency(a, b) = g.adjacency(b, a) = 1.0;
  const Eigen::MatrixXd with_loops = g.adjacency + Eigen::MatrixXd::Identity(21, 21);
  const Eigen::VectorXd inv_sqrt_degree = with_loops.rowwise().sum().cwiseSqrt().cwiseInverse();
  g.normalized = inv_sqrt_degree.asDiagonal() * with_loops * inv_sqrt_degree.asDiagonal();
  return g;
}

Eigen::MatrixXd finger_pooling_matrix() {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(6, 21);
  p(0, 0) = 1.0;
  for (int f = 0; f < 5; ++f)
    for (int l = 0; l < 4; ++l) p(1 + f, 1 + 4 * f + l) = 0.25;
  return p;
}

}  // namespace handmask
