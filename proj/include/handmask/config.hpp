#pragma once

#include "handmask/finetune.hpp"
#include "handmask/model.hpp"
#include "handmask/posedata.hpp"
#include "handmask/pretrain.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace handmask {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Whole-run configuration. One seed drives every random stream of a run
// (the synthetic generator included).
struct Config {
  std::uint64_t seed = 0;
  ModelConfig model;
  SynthConfig synth;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
};

// Missing keys keep their defaults; unknown keys raise ConfigError.
Config parse_config(const nlohmann::json& document);
Config load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const Config& config);

// Throws ConfigError on the first invalid field.
void validate_config(const Config& config);

// Fields fixing parameter shapes, and their FNV-1a hash as 16 hex digits.
nlohmann::ordered_json architecture_json(const ModelConfig& model);
std::string architecture_hash(const ModelConfig& model);

}  // namespace handmask
