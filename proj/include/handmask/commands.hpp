#pragma once

#include "handmask/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace handmask {

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> fuse;  // eval: external N x K score file
  bool force = false;
};

// Config file (or defaults) with the --seed override applied.
Config resolve_config(const CommandOptions& options);

// Dataset directories hold one pose-JSON file per sequence, read in file-name order.
std::vector<HandSequence> read_dataset(const std::filesystem::path& dir);
void write_dataset(const std::vector<HandSequence>& sequences, const std::filesystem::path& dir, bool force);

// Each command prints machine-readable JSON lines on `log`.
void cmd_synth(const CommandOptions& options, std::ostream& log);
void cmd_pretrain(const CommandOptions& options, std::ostream& log);
void cmd_finetune(const CommandOptions& options, std::ostream& log);
nlohmann::ordered_json cmd_eval(const CommandOptions& options, std::ostream& log);
void cmd_reconstruct(const CommandOptions& options, std::ostream& log);

// 0 ok, 1 validation error, 2 runtime error; the message goes to `err`.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& log, std::ostream& err);

}  // namespace handmask
