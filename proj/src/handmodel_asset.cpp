#include "handmask/handmodel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace handmask {
namespace {

constexpr int kFingerSides = 10;
constexpr int kFingerRings = 14;
constexpr int kPalmSides = 12;
constexpr int kPalmRings = 6;
constexpr int kPalmVertices = kPalmSides * kPalmRings + 1;
constexpr int kFingerVertices = kFingerSides * kFingerRings + 1;

double to_float_precision(double x) { return static_cast<double>(static_cast<float>(x)); }

Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

struct FingerLayout {
  Eigen::Vector3d base;
  Eigen::Vector3d direction;
  std::array<double, 3> lengths;
  double radius;
};

// Thumb, index, middle, ring, pinky. Model units: the hand is about one unit
// long, wrist at the origin, fingers along +y, palm normal +z.
std::array<FingerLayout, 5> finger_layout() {
  std::array<FingerLayout, 5> f;
  f[0] = {{-0.10, 0.10, 0.0}, Eigen::Vector3d(-0.6, 0.8, 0.0).normalized(), {0.16, 0.12, 0.10}, 0.042};
  f[1] = {{-0.12, 0.42, 0.0}, Eigen::Vector3d(-0.08, 1.0, 0.0).normalized(), {0.17, 0.10, 0.08}, 0.036};
  f[2] = {{-0.04, 0.44, 0.0}, Eigen::Vector3d(0.0, 1.0, 0.0), {0.19, 0.11, 0.08}, 0.037};
  f[3] = {{0.04, 0.42, 0.0}, Eigen::Vector3d(0.06, 1.0, 0.0).normalized(), {0.17, 0.10, 0.08}, 0.035};
  f[4] = {{0.12, 0.38, 0.0}, Eigen::Vector3d(0.14, 1.0, 0.0).normalized(), {0.13, 0.08, 0.07}, 0.031};
  return f;
}

void fail(const std::string& what) { throw AssetError("hand model asset: " + what); }

// Binary container helpers: little-endian, the host is assumed to be too.
template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail("truncated file");
  return value;
}

struct NamedArray {
  bool is_int = false;
  std::vector<std::uint32_t> dims;
  std::vector<float> floats;
  std::vector<std::int32_t> ints;
};

NamedArray float_array(const Eigen::MatrixXd& m) {
  NamedArray a;
  a.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  a.floats.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.floats.push_back(static_cast<float>(m(i, j)));
  return a;
}

NamedArray int_array(const Eigen::MatrixXi& m) {
  NamedArray a;
  a.is_int = true;
  a.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.ints.push_back(m(i, j));
  return a;
}

Eigen::MatrixXd to_matrix(const NamedArray& a, const std::string& name) {
  if (a.is_int || a.dims.size() != 2) fail("array '" + name + "' must be a 2-D float32 array");
  Eigen::MatrixXd m(a.dims[0], a.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.floats[k++];
  return m;
}

Eigen::MatrixXi to_int_matrix(const NamedArray& a, const std::string& name) {
  if (!a.is_int || a.dims.size() != 2) fail("array '" + name + "' must be a 2-D int32 array");
  Eigen::MatrixXi m(a.dims[0], a.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.ints[k++];
  return m;
}

}  // namespace

void validate_asset(const HandModelAsset& a) {
  const Eigen::Index nv = a.vertex_count();
  if (nv == 0 || a.template_vertices.cols() != 3) fail("template must be Nv x 3 with Nv > 0");
  if (a.faces.cols() != 3) fail("faces must be Nf x 3");
  if (a.shape_basis.rows() != 3 * nv || a.shape_basis.cols() != kShapeDims)
    fail("shape_basis must be 3Nv x 10, got " + std::to_string(a.shape_basis.rows()) + "x" +
         std::to_string(a.shape_basis.cols()));
  if (a.pose_basis.rows() != 3 * nv || a.pose_basis.cols() != kJointAngleDims)
    fail("pose_basis must be 3Nv x 45, got " + std::to_string(a.pose_basis.rows()) + "x" +
         std::to_string(a.pose_basis.cols()));
  if (a.pose_pca.rows() != kJointAngleDims || a.pose_pca.cols() != kPcaDims) fail("pose_pca must be 45 x 22");
  if (a.joint_regressor.rows() != kArticulatedJoints || a.joint_regressor.cols() != nv)
    fail("joint_regressor must be 16 x Nv");
  if (a.skinning.rows() != nv || a.skinning.cols() != kArticulatedJoints) fail("skinning must be Nv x 16");
  for (Eigen::Index i = 0; i < a.faces.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      if (a.faces(i, c) < 0 || a.faces(i, c) >= nv)
        fail("face " + std::to_string(i) + " references vertex " + std::to_string(a.faces(i, c)) +
             " outside [0, " + std::to_string(nv) + ")");
  for (Eigen::Index v = 0; v < nv; ++v) {
    if (a.skinning.row(v).minCoeff() < 0.0) fail("skinning row " + std::to_string(v) + " has a negative weight");
    const double s = a.skinning.row(v).sum();
    if (std::abs(s - 1.0) > 1e-5) fail("skinning row " + std::to_string(v) + " sums to " + std::to_string(s));
  }
  for (int k = 0; k < kArticulatedJoints; ++k) {
    const double s = a.joint_regressor.row(k).sum();
    if (std::abs(s - 1.0) > 1e-5) fail("joint_regressor row " + std::to_string(k) + " sums to " + std::to_string(s));
  }
  for (int f = 0; f < kFingertips; ++f)
    if (a.fingertips[f] < 0 || a.fingertips[f] >= nv) fail("fingertip index " + std::to_string(a.fingertips[f]) + " out of range");
  const bool finite = a.template_vertices.allFinite() && a.shape_basis.allFinite() && a.pose_basis.allFinite() &&
                      a.pose_pca.allFinite() && a.joint_regressor.allFinite() && a.skinning.allFinite();
  if (!finite) fail("non-finite entries");
}

HandModelAsset synth_asset(std::uint64_t seed) {
  Rng rng(seed);
  const auto fingers = finger_layout();
  HandModelAsset a;
  const int nv = kPalmVertices + 5 * kFingerVertices;
  a.template_vertices.resize(nv, 3);
  a.skinning = Eigen::MatrixXd::Zero(nv, kArticulatedJoints);
  a.joint_regressor = Eigen::MatrixXd::Zero(kArticulatedJoints, nv);
  std::vector<Eigen::Vector3i> faces;

  // Palm: elliptical tube from the wrist ring up to the knuckle line, capped
  // at the wrist by a centre vertex.
  const double palm_top = 0.40;
  for (int r = 0; r < kPalmRings; ++r) {
    const double u = static_cast<double>(r) / (kPalmRings - 1);
    const double half_width = 0.11 + 0.06 * u;
    for (int s = 0; s < kPalmSides; ++s) {
      const double phi = 2.0 * std::numbers::pi * s / kPalmSides;
      const int v = r * kPalmSides + s;
      a.template_vertices.row(v) << half_width * std::cos(phi), palm_top * u, 0.05 * std::sin(phi);
      if (r < kPalmRings - 2) {
        a.skinning(v, 0) = 1.0;
      } else {
        // Upper palm rings follow the nearest finger base a little.
        int nearest = 1;
        double best = 1e9;
        for (int f = 1; f < 5; ++f) {
          const double d = std::abs(fingers[f].base.x() - a.template_vertices(v, 0));
          if (d < best) best = d, nearest = 1 + 3 * f;
        }
        const double follow = r == kPalmRings - 1 ? 0.3 : 0.15;
        a.skinning(v, 0) = 1.0 - follow;
        a.skinning(v, nearest) = follow;
      }
    }
  }
  const int wrist_cap = kPalmRings * kPalmSides;
  a.template_vertices.row(wrist_cap).setZero();
  a.skinning(wrist_cap, 0) = 1.0;
  for (int s = 0; s < kPalmSides; ++s) a.joint_regressor(0, s) = 1.0 / kPalmSides;
  for (int r = 0; r + 1 < kPalmRings; ++r)
    for (int s = 0; s < kPalmSides; ++s) {
      const int s1 = (s + 1) % kPalmSides;
      const int p00 = r * kPalmSides + s, p01 = r * kPalmSides + s1;
      const int p10 = (r + 1) * kPalmSides + s, p11 = (r + 1) * kPalmSides + s1;
      faces.emplace_back(p00, p10, p01);
      faces.emplace_back(p01, p10, p11);
    }
  for (int s = 0; s < kPalmSides; ++s) faces.emplace_back(wrist_cap, (s + 1) % kPalmSides, s);

  // Fingers: tubes along base -> mid -> distal -> tip with rings 0, 4, 8 on
  // the three articulated joints, closed by a tip vertex.
  for (int f = 0; f < 5; ++f) {
    const FingerLayout& L = fingers[f];
    const int first = kPalmVertices + f * kFingerVertices;
    std::array<Eigen::Vector3d, 4> pts;
    pts[0] = L.base;
    for (int k = 0; k < 3; ++k) pts[k + 1] = pts[k] + L.direction * L.lengths[k];
    const Eigen::Vector3d side = L.direction.cross(Eigen::Vector3d::UnitZ()).normalized();
    for (int r = 0; r < kFingerRings; ++r) {
      const int segment = std::min(r / 4, 2);
      const double u = segment < 2 ? (r - 4 * segment) / 4.0 : (r - 8) / 6.0;
      const Eigen::Vector3d centre = pts[segment] + (pts[segment + 1] - pts[segment]) * u;
      const double t = (segment + u) / 3.0;
      const double radius = L.radius * (1.0 - 0.3 * t);
      const int own = 1 + 3 * f + segment;
      const int parent = articulated_parent(own);
      const double blend = u < 0.25 ? 0.5 * (1.0 - u / 0.25) : 0.0;
      for (int s = 0; s < kFingerSides; ++s) {
        const double phi = 2.0 * std::numbers::pi * s / kFingerSides;
        const int v = first + r * kFingerSides + s;
        a.template_vertices.row(v) = (centre + radius * (std::cos(phi) * side + std::sin(phi) * Eigen::Vector3d::UnitZ())).transpose();
        a.skinning(v, own) = 1.0 - blend;
        a.skinning(v, parent) += blend;
      }
      if (r % 4 == 0 && r <= 8)
        for (int s = 0; s < kFingerSides; ++s) a.joint_regressor(own, first + r * kFingerSides + s) = 1.0 / kFingerSides;
    }
    const int tip = first + kFingerRings * kFingerSides;
    a.template_vertices.row(tip) = (pts[3] + L.direction * 0.2 * L.radius).transpose();
    a.skinning(tip, 3 + 3 * f) = 1.0;
    a.fingertips[f] = tip;
    for (int r = 0; r + 1 < kFingerRings; ++r)
      for (int s = 0; s < kFingerSides; ++s) {
        const int s1 = (s + 1) % kFingerSides;
        const int p00 = first + r * kFingerSides + s, p01 = first + r * kFingerSides + s1;
        const int p10 = first + (r + 1) * kFingerSides + s, p11 = first + (r + 1) * kFingerSides + s1;
        faces.emplace_back(p00, p10, p01);
        faces.emplace_back(p01, p10, p11);
      }
    for (int s = 0; s < kFingerSides; ++s)
      faces.emplace_back(tip, first + (kFingerRings - 1) * kFingerSides + s,
                         first + (kFingerRings - 1) * kFingerSides + (s + 1) % kFingerSides);
  }

  // Webbing between neighbouring fingers over their first rings.
  for (int f = 0; f + 1 < 5; ++f) {
    const int a0 = kPalmVertices + f * kFingerVertices;
    const int b0 = kPalmVertices + (f + 1) * kFingerVertices;
    const int a_side = 0;                     // faces +side of finger f
    const int b_side = kFingerSides / 2;      // faces -side of finger f+1
    for (int r = 0; r < 7; ++r) {
      const int pa = a0 + r * kFingerSides + a_side, pa1 = a0 + (r + 1) * kFingerSides + a_side;
      const int pb = b0 + r * kFingerSides + b_side, pb1 = b0 + (r + 1) * kFingerSides + b_side;
      faces.emplace_back(pa, pb, pa1);
      faces.emplace_back(pb, pb1, pa1);
    }
  }

  a.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) a.faces.row(static_cast<Eigen::Index>(i)) = faces[i].transpose();

  a.shape_basis = 0.5 * random_orthonormal(3 * nv, kShapeDims, rng);
  a.pose_basis = 0.2 * random_orthonormal(3 * nv, kJointAngleDims, rng);
  a.pose_pca = random_orthonormal(kJointAngleDims, kPcaDims, rng);

  for (Eigen::Index v = 0; v < nv; ++v) a.skinning.row(v) /= a.skinning.row(v).sum();
  // Store everything at float32 precision so the file format round-trips.
  for (Eigen::MatrixXd* m : {&a.template_vertices, &a.shape_basis, &a.pose_basis, &a.pose_pca, &a.joint_regressor, &a.skinning})
    *m = m->unaryExpr(&to_float_precision);
  validate_asset(a);
  return a;
}

void save_asset(const HandModelAsset& asset, const std::filesystem::path& path) {
  validate_asset(asset);
  std::map<std::string, NamedArray> arrays;
  arrays["template"] = float_array(asset.template_vertices);
  arrays["faces"] = int_array(asset.faces);
  arrays["shape_basis"] = float_array(asset.shape_basis);
  arrays["pose_basis"] = float_array(asset.pose_basis);
  arrays["pose_pca"] = float_array(asset.pose_pca);
  arrays["joint_regressor"] = float_array(asset.joint_regressor);
  arrays["skinning"] = float_array(asset.skinning);
  Eigen::MatrixXi tips(1, kFingertips);
  for (int f = 0; f < kFingertips; ++f) tips(0, f) = asset.fingertips[f];
  arrays["fingertips"] = int_array(tips);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw AssetError("cannot open " + path.string() + " for writing");
  out.write("HMA1", 4);
  write_pod<std::uint32_t>(out, 1);  // version
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, arr] : arrays) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(out, arr.is_int ? 1 : 0);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arr.dims.size()));
    for (auto d : arr.dims) write_pod<std::uint32_t>(out, d);
    if (arr.is_int)
      out.write(reinterpret_cast<const char*>(arr.ints.data()), static_cast<std::streamsize>(arr.ints.size() * 4));
    else
      out.write(reinterpret_cast<const char*>(arr.floats.data()), static_cast<std::streamsize>(arr.floats.size() * 4));
  }
  if (!out) throw AssetError("failed writing " + path.string());
}

HandModelAsset load_asset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AssetError("hand model asset not found: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HMA1", 4) != 0) fail("bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1) fail("unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in);
  std::map<std::string, NamedArray> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(in);
    if (len > 1024) fail("implausible array name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    NamedArray arr;
    arr.is_int = read_pod<std::uint8_t>(in) != 0;
    const auto ndim = read_pod<std::uint32_t>(in);
    if (ndim > 4) fail("array '" + name + "' has too many dimensions");
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      arr.dims.push_back(read_pod<std::uint32_t>(in));
      total *= arr.dims.back();
    }
    if (total > (std::size_t{1} << 28)) fail("array '" + name + "' is implausibly large");
    if (arr.is_int) {
      arr.ints.resize(total);
      in.read(reinterpret_cast<char*>(arr.ints.data()), static_cast<std::streamsize>(total * 4));
    } else {
      arr.floats.resize(total);
      in.read(reinterpret_cast<char*>(arr.floats.data()), static_cast<std::streamsize>(total * 4));
    }
    if (!in) fail("truncated array '" + name + "'");
    arrays[name] = std::move(arr);
  }
  auto need = [&](const std::string& name) -> const NamedArray& {
    auto it = arrays.find(name);
    if (it == arrays.end()) fail("missing array '" + name + "'");
    return it->second;
  };
  HandModelAsset a;
  a.template_vertices = to_matrix(need("template"), "template");
  a.faces = to_int_matrix(need("faces"), "faces");
  a.shape_basis = to_matrix(need("shape_basis"), "shape_basis");
  a.pose_basis = to_matrix(need("pose_basis"), "pose_basis");
  a.pose_pca = to_matrix(need("pose_pca"), "pose_pca");
  a.joint_regressor = to_matrix(need("joint_regressor"), "joint_regressor");
  a.skinning = to_matrix(need("skinning"), "skinning");
  const Eigen::MatrixXi tips = to_int_matrix(need("fingertips"), "fingertips");
  if (tips.size() != kFingertips) fail("fingertips must hold 5 indices");
  for (int f = 0; f < kFingertips; ++f) a.fingertips[f] = tips(f);
  validate_asset(a);
  return a;
}

}  // namespace handmask
