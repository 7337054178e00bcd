#pragma once

// Run configuration: one JSON file with sections model, fusion, encoders, data,
// train and eval. Every field has a default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "scd/audio.hpp"
#include "scd/data.hpp"
#include "scd/errors.hpp"
#include "scd/fusion.hpp"
#include "scd/lm.hpp"
#include "scd/video.hpp"

namespace scd {

struct ModelSection {
  DecoderConfig decoder;  // decoder.max_len is the fixed sequence length l
  std::string templates_dir;  // empty = built-in prompts
};

struct EncoderSection {
  MelConfig mel;
  std::size_t clusters = 8;
  VideoEncoderConfig video;
};

struct DataSection {
  GenSpec gen;
  PrepConfig prep;
};

struct TrainSection {
  // Pretraining: encoders + fusion with a two-way classifier.
  std::size_t pretrain_epochs = 100;
  std::size_t pretrain_batch = 16;
  double pretrain_lr = 1e-3;
  double pretrain_target_accuracy = 1.0;  // stop early once reached on the train set
  // Fine-tuning: LoRA, adapters and W on the answer token.
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 1e-3;
  double warmup_fraction = 0.05;
  std::size_t eval_every = 50;
  double target_accuracy = 1.0;
  bool freeze_encoders = true;  // codebook, MFVE and VAFM after pretraining
  bool train_adapters = true;
  bool train_shared = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct EvalSection {
  DecodeConfig decode;
  std::size_t negation_window = 3;
};

struct Config {
  std::uint64_t seed = 0;
  ModelSection model;
  FusionConfig fusion;
  EncoderSection encoders;
  DataSection data;
  TrainSection train;
  EvalSection eval;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

Config default_config();
/// LoRA rank 64, alpha 16, dropout 0.05, max LR 1e-5, pretraining LR 1e-4 for 100 epochs.
Config full_preset();
/// "desk" or "full".
Config preset(const std::string& name);

/// Overlays `j` on `base`. A top-level "preset" key selects the base.
Config config_from_json(const nlohmann::json& j, const Config& base = default_config());
Config load_config(const std::filesystem::path& path);
nlohmann::json to_json(const Config& c);

/// FNV-1a over the canonical dump of the sections that fix parameter shapes
/// (model, encoders, fusion), as 16 hex digits.
std::string config_hash(const Config& c);

}  // namespace scd
