#pragma once

#include "handmask/autodiff.hpp"
#include "handmask/parameters.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace handmask {

inline constexpr int kHandJoints = 21;
inline constexpr int kArticulatedJoints = 16;
inline constexpr int kFingertips = 5;
inline constexpr int kPoseDims = 25;     // 3 global axis-angle + 22 PCA coefficients
inline constexpr int kPcaDims = 22;
inline constexpr int kJointAngleDims = 45;  // 15 local axis-angle triples
inline constexpr int kShapeDims = 10;
inline constexpr int kLatentDims = 41;   // pose, shape, cam rotation, cam offset, cam scale

// Column offsets inside a latent row.
inline constexpr int kLatentPose = 0;
inline constexpr int kLatentShape = 25;
inline constexpr int kLatentCamRotation = 35;
inline constexpr int kLatentCamOffset = 38;
inline constexpr int kLatentCamScale = 40;

class AssetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Articulated joint k = 1 + 3 * finger + level (fingers thumb..pinky, level
// 0 at the base); joint 0 is the wrist.
constexpr int articulated_parent(int joint) { return joint == 0 ? -1 : ((joint - 1) % 3 == 0 ? 0 : joint - 1); }

// Position of articulated joint k in the 21-joint output order
// (wrist, then per finger base..tip).
constexpr int output_index_of_articulated(int joint) { return joint == 0 ? 0 : 1 + 4 * ((joint - 1) / 3) + (joint - 1) % 3; }
constexpr int output_index_of_tip(int finger) { return 4 + 4 * finger; }

struct HandModelAsset {
  Eigen::MatrixXd template_vertices;  // Nv x 3
  Eigen::MatrixXi faces;              // Nf x 3
  Eigen::MatrixXd shape_basis;        // 3Nv x 10, row 3v + axis
  Eigen::MatrixXd pose_basis;         // 3Nv x 45
  Eigen::MatrixXd pose_pca;           // 45 x 22
  Eigen::MatrixXd joint_regressor;    // 16 x Nv
  Eigen::MatrixXd skinning;           // Nv x 16
  std::array<int, kFingertips> fingertips{};

  Eigen::Index vertex_count() const { return template_vertices.rows(); }
  Eigen::Index face_count() const { return faces.rows(); }
};

// Throws AssetError describing the first violated invariant.
void validate_asset(const HandModelAsset& asset);

// Procedural 778-vertex, 1538-face hand built from tubes along the bones.
HandModelAsset synth_asset(std::uint64_t seed);

void save_asset(const HandModelAsset& asset, const std::filesystem::path& path);
HandModelAsset load_asset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Scalar helpers shared by plain and forward-mode (jet) evaluation.

template <typename T>
struct ScalarTraits {
  using Real = T;
  static double value(const T& x) { return static_cast<double>(x); }
};

template <typename D>
struct ScalarTraits<Eigen::AutoDiffScalar<D>> {
  using Real = typename D::Scalar;
  static double value(const Eigen::AutoDiffScalar<D>& x) { return static_cast<double>(x.value()); }
};

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

template <typename T>
Mat3<T> skew(const Vec3<T>& w) {
  Mat3<T> k;
  k << T(0), -w(2), w(1), w(2), T(0), -w(0), -w(1), w(0), T(0);
  return k;
}

// Axis-angle to rotation matrix. Small angles use the series expansion of
// sin(t)/t and (1-cos t)/t^2 so derivatives stay exact at zero.
template <typename T>
Mat3<T> rodrigues(const Vec3<T>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  using Real = typename ScalarTraits<T>::Real;
  const T theta2 = w.squaredNorm();
  T a, b;
  if (ScalarTraits<T>::value(theta2) < 1e-6) {
    a = T(Real(1)) - theta2 * Real(1.0 / 6.0) + theta2 * theta2 * Real(1.0 / 120.0);
    b = T(Real(0.5)) - theta2 * Real(1.0 / 24.0) + theta2 * theta2 * Real(1.0 / 720.0);
  } else {
    const T theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (T(Real(1)) - cos(theta)) / theta2;
  }
  const Mat3<T> k = skew(w);
  Mat3<T> r = Mat3<T>::Identity() + k * a + (k * k) * b;
  return r;
}

template <typename T>
struct LatentFrame {
  Eigen::Matrix<T, kPoseDims, 1> pose;
  Eigen::Matrix<T, kShapeDims, 1> shape;
  Vec3<T> cam_rotation;
  Eigen::Matrix<T, 2, 1> cam_offset;
  T cam_scale;

  template <typename Derived>
  static LatentFrame from_vector(const Eigen::MatrixBase<Derived>& z) {
    LatentFrame f;
    for (int i = 0; i < kPoseDims; ++i) f.pose(i) = z(kLatentPose + i);
    for (int i = 0; i < kShapeDims; ++i) f.shape(i) = z(kLatentShape + i);
    for (int i = 0; i < 3; ++i) f.cam_rotation(i) = z(kLatentCamRotation + i);
    for (int i = 0; i < 2; ++i) f.cam_offset(i) = z(kLatentCamOffset + i);
    f.cam_scale = z(kLatentCamScale);
    return f;
  }
};

// Global rotation followed by the 15 local joint rotations.
template <typename T, typename S>
std::array<Mat3<T>, kArticulatedJoints> pose_to_rotations(const Eigen::Matrix<T, kPoseDims, 1>& pose,
                                                          const Matrix<S>& pose_pca) {
  std::array<Mat3<T>, kArticulatedJoints> rot;
  rot[0] = rodrigues<T>(pose.template head<3>());
  for (int k = 1; k < kArticulatedJoints; ++k) {
    Vec3<T> aa = Vec3<T>::Zero();
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < kPcaDims; ++p) aa(c) += pose(3 + p) * static_cast<typename ScalarTraits<T>::Real>(pose_pca(3 * (k - 1) + c, p));
    rot[k] = rodrigues<T>(aa);
  }
  return rot;
}

template <typename T, typename S>
Eigen::Matrix<T, kJointAngleDims, 1> joint_axis_angles(const Eigen::Matrix<T, kPoseDims, 1>& pose, const Matrix<S>& pose_pca) {
  Eigen::Matrix<T, kJointAngleDims, 1> aa = Eigen::Matrix<T, kJointAngleDims, 1>::Zero();
  for (int r = 0; r < kJointAngleDims; ++r)
    for (int p = 0; p < kPcaDims; ++p) aa(r) += pose(3 + p) * static_cast<typename ScalarTraits<T>::Real>(pose_pca(r, p));
  return aa;
}

// Per-joint global transforms. `offset[k]` is (translation - rest joint), so
// the rest pose keeps every offset exactly zero.
template <typename T>
struct PosedSkeleton {
  std::array<Mat3<T>, kArticulatedJoints> rotation;
  std::array<Vec3<T>, kArticulatedJoints> rest_joint;
  std::array<Vec3<T>, kArticulatedJoints> offset;

  Vec3<T> joint(int k) const { return rest_joint[k] + offset[k]; }

  // Linear blend skinning of one rest-space point.
  template <typename WeightRow>
  Vec3<T> skin(const Vec3<T>& p, const WeightRow& weights) const {
    using Real = typename ScalarTraits<T>::Real;
    Vec3<T> delta = Vec3<T>::Zero();
    for (int k = 0; k < kArticulatedJoints; ++k) {
      const Real w = static_cast<Real>(weights(k));
      if (w == Real(0)) continue;
      delta += ((rotation[k] - Mat3<T>::Identity()) * (p - rest_joint[k]) + offset[k]) * w;
    }
    return p + delta;
  }
};

template <typename T>
PosedSkeleton<T> forward_kinematics(const std::array<Mat3<T>, kArticulatedJoints>& local,
                                    const std::array<Vec3<T>, kArticulatedJoints>& rest_joint) {
  PosedSkeleton<T> s;
  s.rest_joint = rest_joint;
  s.rotation[0] = local[0];
  s.offset[0] = Vec3<T>::Zero();
  for (int k = 1; k < kArticulatedJoints; ++k) {
    const int p = articulated_parent(k);
    s.rotation[k] = s.rotation[p] * local[k];
    s.offset[k] = s.offset[p] + (s.rotation[p] - Mat3<T>::Identity()) * (rest_joint[k] - rest_joint[p]);
  }
  return s;
}

// Weak-perspective camera: scale * drop_z(R * X) + offset, per row of X.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 2> project_weak_perspective(const Eigen::Matrix<T, Eigen::Dynamic, 3>& points,
                                                             const Mat3<T>& rotation,
                                                             const Eigen::Matrix<T, 2, 1>& offset, const T& scale) {
  Eigen::Matrix<T, Eigen::Dynamic, 2> out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3<T> r = rotation * points.row(i).transpose();
    out(i, 0) = scale * r(0) + offset(0);
    out(i, 1) = scale * r(1) + offset(1);
  }
  return out;
}

// Full mesh M(beta, theta): blendshapes then skinning. Nv x 3.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 3> lbs_mesh(const Eigen::Matrix<T, kPoseDims, 1>& pose,
                                             const Eigen::Matrix<T, kShapeDims, 1>& shape,
                                             const HandModelAsset& asset, PosedSkeleton<T>* skeleton_out = nullptr) {
  using Real = typename ScalarTraits<T>::Real;
  const Eigen::Index nv = asset.vertex_count();
  const auto aa = joint_axis_angles<T>(pose, asset.pose_pca);
  // Shaped rest mesh drives the joint regressor; the pose correctives do not.
  Eigen::Matrix<T, Eigen::Dynamic, 3> shaped(nv, 3);
  Eigen::Matrix<T, Eigen::Dynamic, 3> rest(nv, 3);
  for (Eigen::Index v = 0; v < nv; ++v) {
    for (int c = 0; c < 3; ++c) {
      T s = T(static_cast<Real>(asset.template_vertices(v, c)));
      for (int b = 0; b < kShapeDims; ++b) s += shape(b) * static_cast<Real>(asset.shape_basis(3 * v + c, b));
      T r = s;
      for (int q = 0; q < kJointAngleDims; ++q) r += aa(q) * static_cast<Real>(asset.pose_basis(3 * v + c, q));
      shaped(v, c) = s;
      rest(v, c) = r;
    }
  }
  std::array<Vec3<T>, kArticulatedJoints> joints;
  for (int k = 0; k < kArticulatedJoints; ++k) {
    joints[k] = Vec3<T>::Zero();
    for (Eigen::Index v = 0; v < nv; ++v) {
      const Real w = static_cast<Real>(asset.joint_regressor(k, v));
      if (w != Real(0)) joints[k] += shaped.row(v).transpose() * w;
    }
  }
  const PosedSkeleton<T> skel = forward_kinematics<T>(pose_to_rotations<T>(pose, asset.pose_pca), joints);
  Eigen::Matrix<T, Eigen::Dynamic, 3> posed(nv, 3);
  for (Eigen::Index v = 0; v < nv; ++v) posed.row(v) = skel.skin(Vec3<T>(rest.row(v).transpose()), asset.skinning.row(v)).transpose();
  if (skeleton_out) *skeleton_out = skel;
  return posed;
}

// 21 joints: posed articulated joints plus the fingertip vertices.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 3> joints_3d(const Eigen::Matrix<T, Eigen::Dynamic, 3>& mesh,
                                              const PosedSkeleton<T>& skeleton, const HandModelAsset& asset) {
  Eigen::Matrix<T, Eigen::Dynamic, 3> out(kHandJoints, 3);
  for (int k = 0; k < kArticulatedJoints; ++k) out.row(output_index_of_articulated(k)) = skeleton.joint(k).transpose();
  for (int f = 0; f < kFingertips; ++f) out.row(output_index_of_tip(f)) = mesh.row(asset.fingertips[f]);
  return out;
}

// Asset quantities restricted to what the 2D joint decoder needs, in the
// working precision.
template <typename S>
struct DecoderTables {
  Matrix<S> pose_pca;     // 45 x 22
  Matrix<S> joint_rest;   // 16 x 3
  Matrix<S> joint_shape;  // 48 x 10, row 3k + axis
  Matrix<S> tip_rest;     // 5 x 3
  Matrix<S> tip_shape;    // 15 x 10
  Matrix<S> tip_pose;     // 15 x 45
  Matrix<S> tip_skinning; // 5 x 16

  static DecoderTables from_asset(const HandModelAsset& asset) {
    DecoderTables t;
    t.pose_pca = asset.pose_pca.cast<S>();
    const Eigen::MatrixXd jr = asset.joint_regressor * asset.template_vertices;
    t.joint_rest = jr.cast<S>();
    Eigen::MatrixXd js(3 * kArticulatedJoints, kShapeDims);
    for (int k = 0; k < kArticulatedJoints; ++k)
      for (int c = 0; c < 3; ++c) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(kShapeDims);
        for (Eigen::Index v = 0; v < asset.vertex_count(); ++v)
          if (asset.joint_regressor(k, v) != 0.0) acc += asset.joint_regressor(k, v) * asset.shape_basis.row(3 * v + c);
        js.row(3 * k + c) = acc;
      }
    t.joint_shape = js.cast<S>();
    t.tip_rest.resize(kFingertips, 3);
    t.tip_shape.resize(3 * kFingertips, kShapeDims);
    t.tip_pose.resize(3 * kFingertips, kJointAngleDims);
    t.tip_skinning.resize(kFingertips, kArticulatedJoints);
    for (int f = 0; f < kFingertips; ++f) {
      const int v = asset.fingertips[f];
      t.tip_rest.row(f) = asset.template_vertices.row(v).cast<S>();
      for (int c = 0; c < 3; ++c) {
        t.tip_shape.row(3 * f + c) = asset.shape_basis.row(3 * v + c).cast<S>();
        t.tip_pose.row(3 * f + c) = asset.pose_basis.row(3 * v + c).cast<S>();
      }
      t.tip_skinning.row(f) = asset.skinning.row(v).cast<S>();
    }
    return t;
  }
};

// Latent (41) -> 21 x 3 model-space joints, touching only the 16 articulated
// joints and the 5 fingertip vertices. Agrees with joints_3d(lbs_mesh(...))
// up to rounding.
template <typename T, typename S>
Eigen::Matrix<T, Eigen::Dynamic, 3> decode_joints_3d(const LatentFrame<T>& z, const DecoderTables<S>& tables) {
  using Real = typename ScalarTraits<T>::Real;
  static_assert(std::is_same_v<Real, S>, "jet real type must match table precision");
  std::array<Vec3<T>, kArticulatedJoints> joints;
  for (int k = 0; k < kArticulatedJoints; ++k)
    for (int c = 0; c < 3; ++c) {
      T v = T(tables.joint_rest(k, c));
      for (int b = 0; b < kShapeDims; ++b) v += z.shape(b) * tables.joint_shape(3 * k + c, b);
      joints[k](c) = v;
    }
  const auto aa = joint_axis_angles<T>(z.pose, tables.pose_pca);
  const PosedSkeleton<T> skel = forward_kinematics<T>(pose_to_rotations<T>(z.pose, tables.pose_pca), joints);
  Eigen::Matrix<T, Eigen::Dynamic, 3> j3(kHandJoints, 3);
  for (int k = 0; k < kArticulatedJoints; ++k) j3.row(output_index_of_articulated(k)) = skel.joint(k).transpose();
  for (int f = 0; f < kFingertips; ++f) {
    Vec3<T> p;
    for (int c = 0; c < 3; ++c) {
      T v = T(tables.tip_rest(f, c));
      for (int b = 0; b < kShapeDims; ++b) v += z.shape(b) * tables.tip_shape(3 * f + c, b);
      for (int q = 0; q < kJointAngleDims; ++q) v += aa(q) * tables.tip_pose(3 * f + c, q);
      p(c) = v;
    }
    j3.row(output_index_of_tip(f)) = skel.skin(p, tables.tip_skinning.row(f)).transpose();
  }
  return j3;
}

// Latent (41) -> 21 x 2 projected joints.
template <typename T, typename S>
Eigen::Matrix<T, kHandJoints, 2> decode_joints_2d(const LatentFrame<T>& z, const DecoderTables<S>& tables) {
  const Mat3<T> cam = rodrigues<T>(z.cam_rotation);
  return project_weak_perspective<T>(decode_joints_3d<T, S>(z, tables), cam, z.cam_offset, z.cam_scale);
}

// Tape operation: latent rows (n x 41) -> projected joints (n x 42, laid out
// x0, y0, x1, y1, ...). The per-row Jacobian is exact, obtained by
// forward-mode propagation through the decoder.
template <typename S>
Var<S> decode_latent_rows(Var<S> latent, const DecoderTables<S>& tables) {
  if (latent.cols() != kLatentDims) throw std::invalid_argument("decode_latent_rows: expected 41 latent columns");
  using Jet = Eigen::AutoDiffScalar<Eigen::Matrix<S, kLatentDims, 1>>;
  const Eigen::Index n = latent.rows();
  const Matrix<S>& z = latent.value();
  Matrix<S> out(n, 2 * kHandJoints);
  Graph<S>& g = latent.graph();
  if (!g.requires_grad(latent)) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto frame = LatentFrame<S>::from_vector(z.row(r));
      const auto j2 = decode_joints_2d<S, S>(frame, tables);
      for (int j = 0; j < kHandJoints; ++j) {
        out(r, 2 * j) = j2(j, 0);
        out(r, 2 * j + 1) = j2(j, 1);
      }
    }
    return g.record(std::move(out), "hand_decode", {latent}, {});
  }
  std::vector<Eigen::Matrix<S, 2 * kHandJoints, kLatentDims>> jacobians(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Matrix<Jet, kLatentDims, 1> zr;
    for (int i = 0; i < kLatentDims; ++i) zr(i) = Jet(z(r, i), kLatentDims, i);
    const auto j2 = decode_joints_2d<Jet, S>(LatentFrame<Jet>::from_vector(zr), tables);
    auto& jac = jacobians[static_cast<std::size_t>(r)];
    for (int j = 0; j < kHandJoints; ++j)
      for (int c = 0; c < 2; ++c) {
        out(r, 2 * j + c) = j2(j, c).value();
        jac.row(2 * j + c) = j2(j, c).derivatives().transpose();
      }
  }
  return g.record(std::move(out), "hand_decode", {latent},
                  [latent, jacobians = std::move(jacobians)](Graph<S>& graph, const Matrix<S>& up) {
                    Matrix<S> gz(up.rows(), kLatentDims);
                    for (Eigen::Index r = 0; r < up.rows(); ++r)
                      gz.row(r) = up.row(r) * jacobians[static_cast<std::size_t>(r)];
                    graph.accumulate(latent, gz);
                  });
}

// Fully-connected map from encoder features to latent frames; the camera
// scale passes through softplus.
template <typename S>
struct LatentHead {
  int weight = -1;
  int bias = -1;

  static LatentHead create(ParameterStore<S>& store, int model_dim, Rng& rng) {
    LatentHead h;
    h.weight = store.add_weight("decoder.latent.weight", model_dim, kLatentDims, rng);
    h.bias = store.add_zeros("decoder.latent.bias", 1, kLatentDims);
    return h;
  }

  Var<S> forward(ParameterBinding<S>& p, Var<S> features) const {
    Var<S> raw = add_row(matmul(features, p[weight]), p[bias]);
    return concat_cols<S>({slice_cols(raw, 0, kLatentCamScale), softplus(slice_cols(raw, kLatentCamScale, 1))});
  }
};

}  // namespace handmask
