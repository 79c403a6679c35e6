#include "handmask/commands.hpp"

#include "handmask/checkpoint.hpp"
#include "handmask/finetune.hpp"
#include "handmask/pretrain.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace handmask {
namespace fs = std::filesystem;

namespace {

const fs::path& require(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw ConfigError(std::string("missing required option ") + flag);
  return *p;
}

void ensure_writable_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
  } else {
    fs::create_directories(dir);
  }
}

void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

int class_count_of(const std::vector<NormalizedSequence>& data) {
  int k = 0;
  for (const auto& s : data)
    if (s.label) k = std::max(k, *s.label + 1);
  if (k == 0) throw ConfigError("dataset has no labelled sequences");
  return k;
}

std::vector<int> all_indices(std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(i);
  return out;
}

const char* strategy_name(const TokenMask& t) {
  if (!t.chosen) return "none";
  switch (t.strategy) {
    case MaskStrategy::kJoint: return t.corruption == JointCorruption::kZero ? "joint_zero" : "joint_disturb";
    case MaskStrategy::kFrame: return "frame";
    case MaskStrategy::kIdentity: return "identity";
    default: return "none";
  }
}

// Model-space row (x0, y0, ...) as crop-pixel pairs.
nlohmann::json pixel_pairs(const Eigen::MatrixXd& m, Eigen::Index row) {
  nlohmann::json out = nlohmann::json::array();
  for (int j = 0; j < kHandJoints; ++j)
    out.push_back({(m(row, 2 * j) + 1.0) / kUnitsPerPixel, (m(row, 2 * j + 1) + 1.0) / kUnitsPerPixel});
  return out;
}

Eigen::MatrixXd read_score_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open score file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("score file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array() || j.empty() || !j.front().is_array()) throw ConfigError("score file must be a non-empty array of rows");
  Eigen::MatrixXd s(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j.front().size()) throw ConfigError("score file rows differ in length");
    for (std::size_t c = 0; c < j[r].size(); ++c) s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return s;
}

}  // namespace

Config resolve_config(const CommandOptions& options) {
  Config c = options.config ? load_config(*options.config) : Config{};
  if (options.seed) {
    c.seed = *options.seed;
    c.synth.seed = *options.seed;
  }
  validate_config(c);
  return c;
}

std::vector<HandSequence> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("dataset directory " + dir.string() + " holds no .json files");
  std::vector<HandSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_sequence_file(f));
  return out;
}

void write_dataset(const std::vector<HandSequence>& sequences, const fs::path& dir, bool force) {
  ensure_writable_dir(dir, force);
  char name[32];
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    std::snprintf(name, sizeof name, "seq_%05zu.json", i);
    write_sequence_file(sequences[i], dir / name);
  }
}

void cmd_synth(const CommandOptions& options, std::ostream& log) {
  const Config config = resolve_config(options);
  const fs::path& out = require(options.out, "--out");
  const auto sequences = synth_generate(config.synth, resolve_asset(config.model));
  write_dataset(sequences, out, options.force);
  nlohmann::ordered_json j;
  j["sequences"] = sequences.size();
  j["out"] = out.string();
  log << j.dump() << "\n";
}

void cmd_pretrain(const CommandOptions& options, std::ostream& log) {
  const Config config = resolve_config(options);
  const fs::path& out = require(options.out, "--out");
  const auto data = normalize_all(read_dataset(require(options.data, "--data")));
  std::optional<Checkpoint> resume;
  if (options.checkpoint) {
    resume = load_checkpoint(*options.checkpoint);
    check_architecture(*resume, config.model);
  }
  const HandModelAsset asset = resolve_asset(config.model);
  Rng init(mix_seed(config.seed, 1));
  HandMaskModel<float> model(config.model, init, true, 0, asset);
  TrainingState<float> state;
  state.rng = Rng(mix_seed(config.seed, 3));
  if (resume) {
    restore_parameters(model, *resume, {""});
    restore_training_state(state, *resume, model.parameters(), config.pretrain.optimizer);
  }
  Rng split_rng(mix_seed(config.seed, 2));
  const DataSplit split = split_dataset(static_cast<int>(data.size()), config.pretrain.heldout_fraction, split_rng);
  const PretrainResult result =
      pretrain_run(model, data, split, config.pretrain, state, [&](const EpochLog& e) { log << e.to_json().dump() << "\n" << std::flush; });
  save_checkpoint(capture_checkpoint(model, &state), out);
  if (!split.heldout.empty()) log << nlohmann::ordered_json{{"heldout", result.heldout.to_json()}}.dump() << "\n";
}

void cmd_finetune(const CommandOptions& options, std::ostream& log) {
  const Config config = resolve_config(options);
  const fs::path& out = require(options.out, "--out");
  const auto data = normalize_all(read_dataset(require(options.data, "--data")));
  const int classes = class_count_of(data);
  std::optional<Checkpoint> init_from;
  if (options.checkpoint) {
    init_from = load_checkpoint(*options.checkpoint);
    check_architecture(*init_from, config.model);
    if (const auto k = checkpoint_head_classes(*init_from); k && *k != classes)
      throw CheckpointError("class-count mismatch: checkpoint head has " + std::to_string(*k) + " classes, dataset has " +
                            std::to_string(classes));
  }
  Rng init(mix_seed(config.seed, 5));
  HandMaskModel<float> model(config.model, init, false, classes);
  if (init_from) {
    std::vector<std::string> prefixes{"embed.", "encoder."};
    if (checkpoint_head_classes(*init_from)) prefixes.push_back("head.");
    restore_parameters(model, *init_from, prefixes);
  }
  std::vector<std::optional<int>> labels;
  for (const auto& s : data) labels.push_back(s.label);
  Rng split_rng(mix_seed(config.seed, 4));
  const DataSplit split = split_per_class(labels, config.finetune.train_per_class, split_rng);
  TrainingState<float> state;
  state.rng = Rng(mix_seed(config.seed, 6));
  const FinetuneResult result =
      finetune_run(model, data, split, config.finetune, state, [&](const FinetuneEpoch& e) { log << e.to_json().dump() << "\n" << std::flush; });
  save_checkpoint(capture_checkpoint(model, &state), out);
  if (!split.heldout.empty()) {
    log << result.metrics.to_json().dump() << "\n";
    write_json(result.metrics.to_json(), fs::path(out.string() + ".metrics.json"));
  }
}

nlohmann::ordered_json cmd_eval(const CommandOptions& options, std::ostream& log) {
  const Config config = resolve_config(options);
  const auto data = normalize_all(read_dataset(require(options.data, "--data")));
  const auto indices = all_indices(data.size());
  nlohmann::ordered_json report;
  if (!options.checkpoint) {
    report["mode"] = "reconstruction";
    report["model"] = "identity";
    report["reconstruction"] = evaluate_reconstruction<float>(nullptr, data, indices, config.pretrain, config.seed).to_json();
  } else {
    const Checkpoint ck = load_checkpoint(*options.checkpoint);
    check_architecture(ck, config.model);
    const bool has_decoder = ck.find("decoder.latent.weight") != nullptr;
    const auto classes = checkpoint_head_classes(ck);
    if (!has_decoder && !classes) throw CheckpointError("checkpoint holds neither a decoder nor a prediction head");
    Rng init(0);
    HandMaskModel<float> model(config.model, init, has_decoder, classes.value_or(0),
                               has_decoder ? std::optional<HandModelAsset>(resolve_asset(config.model)) : std::nullopt);
    restore_parameters(model, ck, {""});
    if (has_decoder) {
      report["mode"] = "reconstruction";
      report["reconstruction"] = evaluate_reconstruction<float>(&model, data, indices, config.pretrain, config.seed).to_json();
    }
    if (classes) {
      std::vector<int> labelled, labels;
      for (int i : indices)
        if (data[static_cast<std::size_t>(i)].label) {
          labelled.push_back(i);
          labels.push_back(*data[static_cast<std::size_t>(i)].label);
        }
      if (labelled.empty()) throw ConfigError("classification eval needs labelled sequences");
      const Eigen::MatrixXd scores = predict_scores(model, data, labelled, config.finetune.frames);
      report["mode"] = "classification";
      report["classification"] = classification_metrics(scores, labels).to_json();
      if (options.fuse) {
        const Eigen::MatrixXd other = read_score_file(*options.fuse);
        if (other.rows() != scores.rows()) throw ConfigError("score file row count differs from the labelled sequence count");
        Eigen::MatrixXd fused(scores.rows(), scores.cols());
        for (Eigen::Index r = 0; r < scores.rows(); ++r) fused.row(r) = fuse_logits(scores.row(r), other.row(r), config.finetune.fusion);
        report["fused"] = classification_metrics(fused, labels).to_json();
      }
    }
  }
  log << report.dump() << "\n";
  if (options.out) write_json(report, *options.out);
  return report;
}

void cmd_reconstruct(const CommandOptions& options, std::ostream& log) {
  const Config config = resolve_config(options);
  const fs::path& out = require(options.out, "--out");
  const auto raw = read_dataset(require(options.data, "--data"));
  const auto data = normalize_all(raw);
  std::optional<HandMaskModel<float>> model;
  if (options.checkpoint) {
    const Checkpoint ck = load_checkpoint(*options.checkpoint);
    check_architecture(ck, config.model);
    if (!ck.find("decoder.latent.weight")) throw CheckpointError("reconstruct needs a pretraining checkpoint with the decoder");
    Rng init(0);
    model.emplace(config.model, init, true, 0, resolve_asset(config.model));
    restore_parameters(*model, ck, {""});
  }
  ensure_writable_dir(out, options.force);
  char name[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Reconstruction r = reconstruct<float>(model ? &*model : nullptr, data[i], config.pretrain, mix_seed(config.seed, i));
    nlohmann::ordered_json doc;
    doc["source_id"] = raw[i].source_id;
    doc["label"] = data[i].label ? nlohmann::json(*data[i].label) : nlohmann::json(nullptr);
    doc["units"] = "crop_pixels";
    nlohmann::ordered_json tokens = nlohmann::ordered_json::array();
    for (Eigen::Index t = 0; t < r.target.token_count(); ++t) {
      nlohmann::ordered_json tok;
      tok["hand"] = r.target.chirality[static_cast<std::size_t>(t)] == Chirality::kLeft ? "L" : "R";
      tok["t"] = r.target.time_index[static_cast<std::size_t>(t)];
      tok["mask"] = strategy_name(r.plan.tokens[static_cast<std::size_t>(t)]);
      tok["target"] = pixel_pairs(r.target.coords, t);
      tok["input"] = pixel_pairs(r.input.coords, t);
      tok["output"] = pixel_pairs(r.output, t);
      std::vector<double> conf;
      for (int j = 0; j < kHandJoints; ++j) conf.push_back(r.target.confidence(t, j));
      tok["confidence"] = conf;
      nlohmann::json j3 = nlohmann::json::array();
      for (int j = 0; j < kHandJoints; ++j) j3.push_back({r.joints_3d(t, 3 * j), r.joints_3d(t, 3 * j + 1), r.joints_3d(t, 3 * j + 2)});
      tok["joints_3d"] = j3;
      tokens.push_back(tok);
    }
    doc["tokens"] = tokens;
    std::snprintf(name, sizeof name, "recon_%05zu.json", i);
    write_json(doc, out / name);
  }
  log << nlohmann::ordered_json{{"reconstructions", data.size()}, {"out", out.string()}}.dump() << "\n";
}

int run_command(const std::string& name, const CommandOptions& options, std::ostream& log, std::ostream& err) {
  try {
    if (name == "synth") cmd_synth(options, log);
    else if (name == "pretrain") cmd_pretrain(options, log);
    else if (name == "finetune") cmd_finetune(options, log);
    else if (name == "eval") cmd_eval(options, log);
    else if (name == "reconstruct") cmd_reconstruct(options, log);
    else throw ConfigError("unknown command '" + name + "'");
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const AssetError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace handmask
