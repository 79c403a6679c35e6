#include "handmask/checkpoint.hpp"

#include "handmask/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace handmask {
namespace {

constexpr char kMagic[4] = {'S', 'B', 'C', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const Eigen::MatrixXf* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : arrays)
    if (n == name) return &m;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& c) {
  nlohmann::ordered_json header;
  header["version"] = Checkpoint::kVersion;
  header["architecture_hash"] = c.architecture_hash;
  header["architecture"] = c.architecture;
  header["epoch"] = c.epoch;
  header["rng_state"] = c.rng_state;
  header["optimizer_step"] = c.optimizer_step ? nlohmann::ordered_json(*c.optimizer_step) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : c.arrays) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = {m.rows(), m.cols()};
    e["offset"] = offset;
    entries.push_back(e);
    offset += 4 * static_cast<std::uint64_t>(m.size());
  }
  header["arrays"] = entries;
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, m] : c.arrays)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index col = 0; col < m.cols(); ++col) put_f32(out, m(r, col));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint64_t len = get_u64(bytes, 4);
  if (len > bytes.size() - 12) throw CheckpointError("checkpoint header truncated");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    if (header.at("version").get<int>() != Checkpoint::kVersion)
      throw CheckpointError("unsupported checkpoint version " + header.at("version").dump());
    c.architecture_hash = header.at("architecture_hash").get<std::string>();
    c.architecture = header.at("architecture");
    c.epoch = header.at("epoch").get<int>();
    c.rng_state = header.at("rng_state").get<std::string>();
    if (!header.at("optimizer_step").is_null()) c.optimizer_step = header.at("optimizer_step").get<std::int64_t>();
    const std::size_t base = 12 + len;
    for (const auto& e : header.at("arrays")) {
      const auto rows = e.at("shape").at(0).get<Eigen::Index>();
      const auto cols = e.at("shape").at(1).get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0 || base + offset + 4 * static_cast<std::uint64_t>(rows * cols) > bytes.size())
        throw CheckpointError("checkpoint array '" + e.at("name").get<std::string>() + "' exceeds the file");
      Eigen::MatrixXf m(rows, cols);
      std::size_t at = base + offset;
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index col = 0; col < cols; ++col, at += 4) m(r, col) = get_f32(bytes, at);
      c.arrays.emplace_back(e.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

Checkpoint capture_checkpoint(const HandMaskModel<float>& model, const TrainingState<float>* state) {
  Checkpoint c;
  c.architecture = architecture_json(model.config());
  c.architecture_hash = architecture_hash(model.config());
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.arrays.emplace_back(params.name(static_cast<int>(i)), params.value(static_cast<int>(i)));
  if (state) {
    c.epoch = state->epoch;
    std::ostringstream rng;
    rng << state->rng;
    c.rng_state = rng.str();
    if (state->optimizer.first_moment.size() == params.size()) {
      c.optimizer_step = state->optimizer.step;
      for (std::size_t i = 0; i < params.size(); ++i)
        c.arrays.emplace_back("adam.m/" + params.name(static_cast<int>(i)), state->optimizer.first_moment[i]);
      for (std::size_t i = 0; i < params.size(); ++i)
        c.arrays.emplace_back("adam.v/" + params.name(static_cast<int>(i)), state->optimizer.second_moment[i]);
    }
  }
  return c;
}

void check_architecture(const Checkpoint& checkpoint, const ModelConfig& model) {
  const std::string expected = architecture_hash(model);
  if (checkpoint.architecture_hash != expected)
    throw CheckpointError("checkpoint architecture hash " + checkpoint.architecture_hash + " does not match config hash " +
                          expected);
}

void restore_parameters(HandMaskModel<float>& model, const Checkpoint& checkpoint, const std::vector<std::string>& prefixes) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(static_cast<int>(i));
    bool wanted = false;
    for (const auto& p : prefixes) wanted = wanted || name.rfind(p, 0) == 0;
    if (!wanted) continue;
    const Eigen::MatrixXf* stored = checkpoint.find(name);
    if (!stored) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    auto& target = params.value(static_cast<int>(i));
    if (stored->rows() != target.rows() || stored->cols() != target.cols())
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " + std::to_string(stored->rows()) + "x" +
                            std::to_string(stored->cols()) + ", model expects " + std::to_string(target.rows()) + "x" +
                            std::to_string(target.cols()));
    target = *stored;
  }
}

void restore_training_state(TrainingState<float>& state, const Checkpoint& checkpoint, const ParameterStore<float>& params,
                            const OptimizerConfig& optimizer) {
  state.epoch = checkpoint.epoch;
  if (!checkpoint.rng_state.empty()) {
    std::istringstream rng(checkpoint.rng_state);
    rng >> state.rng;
    if (!rng) throw CheckpointError("checkpoint RNG state is unreadable");
  }
  state.optimizer = AdamState<float>(optimizer, std::span<const Matrix<float>>(params.values()));
  if (!checkpoint.optimizer_step) return;
  state.optimizer.step = *checkpoint.optimizer_step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(static_cast<int>(i));
    const Eigen::MatrixXf* m = checkpoint.find("adam.m/" + name);
    const Eigen::MatrixXf* v = checkpoint.find("adam.v/" + name);
    if (!m || !v) throw CheckpointError("checkpoint lacks optimizer moments for '" + name + "'");
    state.optimizer.first_moment[i] = *m;
    state.optimizer.second_moment[i] = *v;
  }
}

std::optional<int> checkpoint_head_classes(const Checkpoint& checkpoint) {
  if (const auto* w = checkpoint.find("head.classifier.weight")) return static_cast<int>(w->cols());
  return std::nullopt;
}

}  // namespace handmask
