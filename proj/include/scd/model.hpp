#pragma once

// The assembled model, feature preparation, the two training stages, per-sample
// prediction, and JSON checkpoints.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/audio.hpp"
#include "scd/config.hpp"
#include "scd/data.hpp"
#include "scd/fusion.hpp"
#include "scd/lm.hpp"
#include "scd/text.hpp"
#include "scd/video.hpp"

namespace scd {

struct Model {
  Config cfg;
  PromptSet prompts;
  AudioEncoder audio;
  VideoEncoder video;
  FusionParams fusion;
  ToyDecoder decoder;
  Param cls_weight;  // d_f x 2 head used only while pretraining the encoders
  Param cls_bias;

  /// Every tensor, in a fixed order.
  ParamList params();
  /// Codebook, MFVE without its adapter, and the fusion internals.
  ParamList encoder_params();
  Param* find(const std::string& name);
};

/// Fresh model initialized from cfg.seed.
Model make_model(const Config& cfg);

/// Marks exactly `trainable` as trainable.
void set_trainable(Model& m, const ParamList& trainable);

/// One sample with its audio, cue and text inputs turned into encoder inputs,
/// and (once cache_features() ran) the frozen encoder outputs.
struct Prepared {
  std::string id;
  std::string participant_id;
  std::string dataset;
  Scenario scenario = Scenario::Interview;
  int label = 0;
  std::optional<Matrix> mel;  // t x n_mels
  std::optional<CueSet> cues;
  std::optional<Matrix> audio_features;  // K x n_mels NetVLAD output
  std::optional<Matrix> video_features;  // 4 x d_cue pooled cues
  TokenSequence seq;
};

/// Throws DataError when a present modality cannot be encoded.
Prepared prepare_input(Model& m, const Sample& s, bool drop_audio = false, bool drop_video = false);
std::vector<Prepared> prepare_inputs(Model& m, const std::vector<Sample>& samples, bool drop_audio = false,
                                     bool drop_video = false);
/// Runs the (frozen) NetVLAD and MFVE once per sample.
void cache_features(Model& m, std::vector<Prepared>& items);

/// Adapter tokens -> routing/fusion -> splice -> decoder; 1 x |vocab| logits at
/// the answer position. Encoders run in the graph while their parameters are
/// trainable and come from the cache otherwise.
Var answer_logits(Graph& g, Model& m, const Prepared& p, const ForwardMode& mode, PathChoice* path = nullptr);
/// Pretraining head: mean over fused tokens -> 1 x 2 logits. Needs both modalities.
Var pretrain_logits(Graph& g, Model& m, const Prepared& p);

int answer_token(int label);

struct AdamState {
  std::size_t t = 0;
  std::map<std::string, Matrix> m, v;
};

/// One Adam update of every trainable parameter in `params` from its grad.
void adam_step(const ParamList& params, AdamState& st, double lr, double beta1, double beta2, double eps);

struct TrainState {
  std::string stage;  // "init", "pretrain" or "train"
  std::size_t step = 0;
  AdamState adam;
  std::vector<double> loss_trace;
  std::vector<double> accuracy_trace;
  double train_accuracy = 0.0;
};

/// Learning rate after `step` completed steps: linear warmup then constant.
double learning_rate(const TrainSection& t, std::size_t step);

/// Pretraining stage: audio encoder, MFVE and VAFM with a two-way classifier on paired
/// audio+video samples. Throws DataError when no sample has both.
TrainState pretrain_encoders(Model& m, const std::vector<Sample>& train, std::ostream* log = nullptr);
/// Fine-tuning stage: freezes the decoder base (and the encoders unless configured
/// otherwise) and trains LoRA, the modality adapters and W on the answer token.
TrainState train(Model& m, const std::vector<Sample>& train, std::ostream* log = nullptr);
/// Same, on already prepared inputs.
TrainState train_prepared(Model& m, std::vector<Prepared>& items, std::ostream* log = nullptr);

/// Fraction of items whose arg-max answer-position token is the gold answer.
double answer_accuracy(Model& m, const std::vector<Prepared>& items);

struct Prediction {
  std::string id;
  std::string participant_id;
  std::string dataset;
  int label = 0;
  PathChoice path = PathChoice::TextOnly;
  std::string response;
  Label predicted = Label::Error;
};

/// Decodes with a stream seeded from (seed, sample id) and parses the response.
Prediction predict(Model& m, const Prepared& p, std::uint64_t seed);

nlohmann::json checkpoint_json(Model& m, const TrainState& st);
void save_checkpoint(const std::filesystem::path& path, Model& m, const TrainState& st);
/// Restores every tensor. Throws CheckpointError on a config-hash mismatch,
/// unknown or missing tensors, or shape mismatches.
TrainState restore_checkpoint(const nlohmann::json& j, Model& m);
TrainState load_checkpoint(const std::filesystem::path& path, Model& m);

}  // namespace scd
