#include "handmask/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace handmask {
namespace {

// Reads fields of one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: '" + qualified(key) + "' has the wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + qualified(key) + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(const nlohmann::json& j, const std::string& path, OptimizerConfig& o) {
  Section s(j, path);
  s.get("learning_rate", o.learning_rate);
  s.get("decay_factor", o.decay_factor);
  s.get("decay_interval", o.decay_interval);
  s.get("weight_decay", o.weight_decay);
  s.get("beta1", o.beta1);
  s.get("beta2", o.beta2);
  s.get("epsilon", o.epsilon);
  s.finish();
}

nlohmann::ordered_json optimizer_json(const OptimizerConfig& o) {
  nlohmann::ordered_json j;
  j["learning_rate"] = o.learning_rate;
  j["decay_factor"] = o.decay_factor;
  j["decay_interval"] = o.decay_interval;
  j["weight_decay"] = o.weight_decay;
  j["beta1"] = o.beta1;
  j["beta2"] = o.beta2;
  j["epsilon"] = o.epsilon;
  return j;
}

void validate_optimizer(const OptimizerConfig& o, const std::string& path) {
  if (!(o.learning_rate > 0.0)) throw ConfigError(path + ".learning_rate must be positive");
  if (!(o.decay_factor > 0.0)) throw ConfigError(path + ".decay_factor must be positive");
  if (o.decay_interval < 1) throw ConfigError(path + ".decay_interval must be >= 1");
  if (o.weight_decay < 0.0) throw ConfigError(path + ".weight_decay must be non-negative");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0))
    throw ConfigError(path + " betas must lie in [0, 1)");
  if (!(o.epsilon > 0.0)) throw ConfigError(path + ".epsilon must be positive");
}

}  // namespace

Config parse_config(const nlohmann::json& document) {
  Config c;
  Section root(document, "");
  root.get("seed", c.seed);
  if (const auto* m = root.child("model")) {
    Section s(*m, "model");
    s.get("model_dim", c.model.model_dim);
    s.get("gcn_hidden", c.model.gcn_hidden);
    s.get("gcn_out", c.model.gcn_out);
    s.get("layers", c.model.layers);
    s.get("heads", c.model.heads);
    s.get("ff_dim", c.model.ff_dim);
    s.get("dropout", c.model.dropout);
    s.get("asset_path", c.model.asset_path);
    s.get("asset_seed", c.model.asset_seed);
    s.finish();
  }
  if (const auto* m = root.child("synth")) {
    Section s(*m, "synth");
    s.get("class_count", c.synth.class_count);
    s.get("sequences_per_class", c.synth.sequences_per_class);
    s.get("sequence_length", c.synth.sequence_length);
    s.get("noise_sigma", c.synth.noise_sigma);
    s.get("dropout_rate", c.synth.dropout_rate);
    s.get("frame_drop_rate", c.synth.frame_drop_rate);
    s.finish();
  }
  if (const auto* m = root.child("pretrain")) {
    Section s(*m, "pretrain");
    s.get("max_masked_joints", c.pretrain.max_masked_joints);
    s.get("choose_rate", c.pretrain.choose_rate);
    s.get("confidence_threshold", c.pretrain.confidence_threshold);
    s.get("reg_weight", c.pretrain.reg_weight);
    s.get("shape_weight", c.pretrain.shape_weight);
    s.get("shape_smooth_weight", c.pretrain.shape_smooth_weight);
    s.get("disturb_sigma", c.pretrain.disturb_sigma);
    s.get("epochs", c.pretrain.epochs);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("frames", c.pretrain.frames);
    s.get("heldout_fraction", c.pretrain.heldout_fraction);
    if (const auto* o = s.child("optimizer")) read_optimizer(*o, "pretrain.optimizer", c.pretrain.optimizer);
    s.finish();
  }
  if (const auto* m = root.child("finetune")) {
    Section s(*m, "finetune");
    s.get("epochs", c.finetune.epochs);
    s.get("batch_size", c.finetune.batch_size);
    s.get("frames", c.finetune.frames);
    s.get("train_per_class", c.finetune.train_per_class);
    std::string fusion = c.finetune.fusion == FusionMode::kLogits ? "logits" : "probabilities";
    s.get("fusion", fusion);
    if (fusion == "logits") c.finetune.fusion = FusionMode::kLogits;
    else if (fusion == "probabilities") c.finetune.fusion = FusionMode::kProbabilities;
    else throw ConfigError("config: finetune.fusion must be 'logits' or 'probabilities'");
    if (const auto* o = s.child("optimizer")) read_optimizer(*o, "finetune.optimizer", c.finetune.optimizer);
    s.finish();
  }
  root.finish();
  c.synth.seed = c.seed;
  validate_config(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json config_to_json(const Config& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  auto& m = j["model"];
  m["model_dim"] = c.model.model_dim;
  m["gcn_hidden"] = c.model.gcn_hidden;
  m["gcn_out"] = c.model.gcn_out;
  m["layers"] = c.model.layers;
  m["heads"] = c.model.heads;
  m["ff_dim"] = c.model.ff_dim;
  m["dropout"] = c.model.dropout;
  m["asset_path"] = c.model.asset_path;
  m["asset_seed"] = c.model.asset_seed;
  auto& s = j["synth"];
  s["class_count"] = c.synth.class_count;
  s["sequences_per_class"] = c.synth.sequences_per_class;
  s["sequence_length"] = c.synth.sequence_length;
  s["noise_sigma"] = c.synth.noise_sigma;
  s["dropout_rate"] = c.synth.dropout_rate;
  s["frame_drop_rate"] = c.synth.frame_drop_rate;
  auto& p = j["pretrain"];
  p["max_masked_joints"] = c.pretrain.max_masked_joints;
  p["choose_rate"] = c.pretrain.choose_rate;
  p["confidence_threshold"] = c.pretrain.confidence_threshold;
  p["reg_weight"] = c.pretrain.reg_weight;
  p["shape_weight"] = c.pretrain.shape_weight;
  p["shape_smooth_weight"] = c.pretrain.shape_smooth_weight;
  p["disturb_sigma"] = c.pretrain.disturb_sigma;
  p["epochs"] = c.pretrain.epochs;
  p["batch_size"] = c.pretrain.batch_size;
  p["frames"] = c.pretrain.frames;
  p["heldout_fraction"] = c.pretrain.heldout_fraction;
  p["optimizer"] = optimizer_json(c.pretrain.optimizer);
  auto& f = j["finetune"];
  f["epochs"] = c.finetune.epochs;
  f["batch_size"] = c.finetune.batch_size;
  f["frames"] = c.finetune.frames;
  f["train_per_class"] = c.finetune.train_per_class;
  f["fusion"] = c.finetune.fusion == FusionMode::kLogits ? "logits" : "probabilities";
  f["optimizer"] = optimizer_json(c.finetune.optimizer);
  return j;
}

void validate_config(const Config& c) {
  try {
    c.model.validate();
    validate_synth_config(c.synth);
    c.pretrain.validate();
    c.finetune.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_optimizer(c.pretrain.optimizer, "pretrain.optimizer");
  validate_optimizer(c.finetune.optimizer, "finetune.optimizer");
}

nlohmann::ordered_json architecture_json(const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["model_dim"] = m.model_dim;
  j["gcn_hidden"] = m.gcn_hidden;
  j["gcn_out"] = m.gcn_out;
  j["layers"] = m.layers;
  j["heads"] = m.heads;
  j["ff_dim"] = m.ff_dim;
  return j;
}

std::string architecture_hash(const ModelConfig& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : architecture_json(m).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace handmask
