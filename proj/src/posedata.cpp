#include "handmask/posedata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace handmask {
namespace {

const char* hand_name(Chirality c) { return c == Chirality::kLeft ? "left" : "right"; }

HandPoseFrame parse_hand(const nlohmann::json& hand, Chirality chirality, int t, std::size_t frame_no) {
  HandPoseFrame f;
  f.chirality = chirality;
  f.time_index = t;
  if (hand.is_null()) return f;
  const std::string where = "frame " + std::to_string(frame_no) + " (" + hand_name(chirality) + ")";
  if (!hand.is_array()) throw SchemaError(where + ": hand must be an array of joints or null");
  if (hand.size() != kHandJoints)
    throw SchemaError(where + ": expected 21 joints, got " + std::to_string(hand.size()));
  for (int j = 0; j < kHandJoints; ++j) {
    const auto& joint = hand[static_cast<std::size_t>(j)];
    if (!joint.is_array() || joint.size() != 3 || !joint[0].is_number() || !joint[1].is_number() ||
        !joint[2].is_number()) {
      throw SchemaError(where + ": joint " + std::to_string(j) + " must be [x, y, c]");
    }
    const double x = joint[0].get<double>();
    const double y = joint[1].get<double>();
    const double c = joint[2].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y)) throw SchemaError(where + ": joint " + std::to_string(j) + " is not finite");
    if (!(c >= 0.0 && c <= 1.0))
      throw SchemaError(where + ": joint " + std::to_string(j) + " confidence " + std::to_string(c) + " outside [0,1]");
    f.joints(j, 0) = x;
    f.joints(j, 1) = y;
    f.confidence(j) = c;
  }
  return f;
}

nlohmann::json serialize_hand(const HandPoseFrame& f) {
  if (f.missing()) return nullptr;
  nlohmann::json hand = nlohmann::json::array();
  for (int j = 0; j < kHandJoints; ++j) hand.push_back({f.joints(j, 0), f.joints(j, 1), f.confidence(j)});
  return hand;
}

}  // namespace

void check_sequence(const HandSequence& s) {
  if (s.frames.size() % 2 != 0) throw SchemaError("sequence must hold one left and one right frame per step");
  for (std::size_t step = 0; step < s.steps(); ++step) {
    const auto& l = s.hand(Chirality::kLeft, step);
    const auto& r = s.hand(Chirality::kRight, step);
    if (l.chirality != Chirality::kLeft || r.chirality != Chirality::kRight)
      throw SchemaError("step " + std::to_string(step) + ": chirality order must be left, right");
    if (l.time_index != r.time_index) throw SchemaError("step " + std::to_string(step) + ": hands disagree on time index");
    if (l.time_index < 0) throw SchemaError("step " + std::to_string(step) + ": negative time index");
    if (step > 0 && l.time_index <= s.hand(Chirality::kLeft, step - 1).time_index)
      throw SchemaError("step " + std::to_string(step) + ": time indices must increase");
    for (const auto* f : {&l, &r}) {
      if (!f->joints.allFinite()) throw SchemaError("step " + std::to_string(step) + ": non-finite joint");
      if (f->confidence.minCoeff() < 0.0 || f->confidence.maxCoeff() > 1.0)
        throw SchemaError("step " + std::to_string(step) + ": confidence outside [0,1]");
    }
  }
}

HandSequence parse_sequence(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("pose document must be a JSON object");
  for (const char* key : {"source_id", "fps", "label", "frames"})
    if (!doc.contains(key)) throw SchemaError(std::string("missing key '") + key + "'");
  HandSequence s;
  if (!doc["source_id"].is_string()) throw SchemaError("'source_id' must be a string");
  s.source_id = doc["source_id"].get<std::string>();
  if (!doc["fps"].is_number()) throw SchemaError("'fps' must be a number");
  s.fps = doc["fps"].get<double>();
  if (doc["label"].is_null()) {
    s.label.reset();
  } else if (doc["label"].is_number_integer()) {
    s.label = doc["label"].get<int>();
  } else {
    throw SchemaError("'label' must be an integer or null");
  }
  if (!doc["frames"].is_array()) throw SchemaError("'frames' must be an array");
  std::size_t frame_no = 0;
  int previous = -1;
  for (const auto& fr : doc["frames"]) {
    if (!fr.is_object() || !fr.contains("t") || !fr["t"].is_number_integer())
      throw SchemaError("frame " + std::to_string(frame_no) + ": missing integer 't'");
    const int t = fr["t"].get<int>();
    if (t < 0) throw SchemaError("frame " + std::to_string(frame_no) + ": negative time index");
    if (t <= previous) throw SchemaError("frame " + std::to_string(frame_no) + ": time indices must increase");
    previous = t;
    const nlohmann::json null_hand;
    s.frames.push_back(parse_hand(fr.contains("left") ? fr["left"] : null_hand, Chirality::kLeft, t, frame_no));
    s.frames.push_back(parse_hand(fr.contains("right") ? fr["right"] : null_hand, Chirality::kRight, t, frame_no));
    ++frame_no;
  }
  return s;
}

nlohmann::json serialize_sequence(const HandSequence& s) {
  nlohmann::json doc;
  doc["source_id"] = s.source_id;
  doc["fps"] = s.fps;
  doc["label"] = s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr);
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t step = 0; step < s.steps(); ++step) {
    nlohmann::json fr;
    fr["t"] = s.hand(Chirality::kLeft, step).time_index;
    fr["left"] = serialize_hand(s.hand(Chirality::kLeft, step));
    fr["right"] = serialize_hand(s.hand(Chirality::kRight, step));
    frames.push_back(std::move(fr));
  }
  doc["frames"] = std::move(frames);
  return doc;
}

HandSequence read_sequence_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  try {
    return parse_sequence(doc);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_sequence_file(const HandSequence& sequence, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << serialize_sequence(sequence).dump() << '\n';
}

HandPoseFrame normalize_to_crop(const HandPoseFrame& frame, const CropBox& box) {
  if (!(box.width > 0.0) || !(box.height > 0.0)) throw std::invalid_argument("normalize_to_crop: degenerate crop box");
  const double side = std::max(box.width, box.height);
  const double s = kCropSize / side;
  const double cx = box.x0 + 0.5 * box.width;
  const double cy = box.y0 + 0.5 * box.height;
  HandPoseFrame out = frame;
  out.joints.col(0) = ((frame.joints.col(0).array() - cx) * s + 0.5 * kCropSize).matrix();
  out.joints.col(1) = ((frame.joints.col(1).array() - cy) * s + 0.5 * kCropSize).matrix();
  return out;
}

HandJoints denormalize_from_crop(const HandJoints& crop, const CropBox& box) {
  if (!(box.width > 0.0) || !(box.height > 0.0)) throw std::invalid_argument("denormalize_from_crop: degenerate crop box");
  const double side = std::max(box.width, box.height);
  const double s = side / kCropSize;
  const double cx = box.x0 + 0.5 * box.width;
  const double cy = box.y0 + 0.5 * box.height;
  HandJoints out;
  out.col(0) = ((crop.col(0).array() - 0.5 * kCropSize) * s + cx).matrix();
  out.col(1) = ((crop.col(1).array() - 0.5 * kCropSize) * s + cy).matrix();
  return out;
}

std::optional<CropBox> hand_crop_box(const HandPoseFrame& frame) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  int count = 0;
  for (int j = 0; j < kHandJoints; ++j) {
    if (frame.confidence(j) <= 0.0) continue;
    const Eigen::Vector2d p = frame.joints.row(j).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    centroid += p;
    ++count;
  }
  if (count == 0) return std::nullopt;
  centroid /= count;
  const double side = std::max(2.2 * (hi - lo).maxCoeff(), 1.0);
  return CropBox{centroid.x() - 0.5 * side, centroid.y() - 0.5 * side, side, side};
}

std::vector<int> sample_frames(int length, int count, SamplingMode mode, Rng& rng) {
  if (count <= 0) throw std::invalid_argument("sample_frames: T must be positive");
  if (length <= 0) throw std::invalid_argument("sample_frames: empty sequence");
  std::vector<int> out(static_cast<std::size_t>(count));
  const double width = static_cast<double>(length) / count;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const double offset = mode == SamplingMode::kCenter ? 0.5 : unit(rng);
    const int idx = static_cast<int>(std::floor((i + offset) * width));
    out[static_cast<std::size_t>(i)] = std::clamp(idx, 0, length - 1);
  }
  return out;
}

}  // namespace handmask
