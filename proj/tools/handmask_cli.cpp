#include "handmask/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Masked hand-pose pretraining and sign classification"};
  app.require_subcommand(1, 1);

  handmask::CommandOptions options;
  std::string config, out, checkpoint, data, fuse;
  std::uint64_t seed = 0;

  const char* names[] = {"synth", "pretrain", "finetune", "eval", "reconstruct"};
  const char* help[] = {"write a synthetic pose-JSON dataset", "masked-token pretraining", "fine-tune a classifier",
                        "reconstruction or classification metrics", "dump per-sequence reconstructions"};
  for (int i = 0; i < 5; ++i) {
    auto* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", config, "JSON config file");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "output path");
    sub->add_option("--checkpoint", checkpoint, "checkpoint to load");
    sub->add_option("--data", data, "dataset directory");
    sub->add_flag("--force", options.force, "overwrite existing output");
    if (std::string(names[i]) == "eval") sub->add_option("--fuse", fuse, "N x K score file to fuse with");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--config")) options.config = config;
  if (sub->count("--seed")) options.seed = seed;
  if (sub->count("--out")) options.out = out;
  if (sub->count("--checkpoint")) options.checkpoint = checkpoint;
  if (sub->count("--data")) options.data = data;
  if (sub->get_option_no_throw("--fuse") && sub->count("--fuse")) options.fuse = fuse;
  return handmask::run_command(sub->get_name(), options, std::cout, std::cerr);
}
