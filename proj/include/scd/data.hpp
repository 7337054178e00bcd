#pragma once

// Sample schema with JSON Lines I/O, the synthetic multi-source generator, and
// the preprocessing transforms: rate/fps unification, windowing, QA splitting
// and QA recombination.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/audio.hpp"
#include "scd/errors.hpp"
#include "scd/text.hpp"
#include "scd/video.hpp"

namespace scd {

struct Sample {
  std::string id;
  std::string participant_id;
  Scenario scenario = Scenario::Interview;
  int label = 0;  // 1 = depressed
  std::string split = "train";
  std::optional<std::string> text;
  std::optional<Waveform> audio;
  std::optional<CueSet> cues;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, written back verbatim

  /// "dataset" from the extra fields, or "default".
  std::string dataset() const;
  double duration_s() const;
};

nlohmann::json to_json(const Sample& s);
/// Throws DataError naming the offending field.
Sample sample_from_json(const nlohmann::json& j);

std::vector<Sample> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples);

struct GenSpec {
  std::size_t train_participants = 64;
  std::size_t test_participants = 32;
  std::vector<Scenario> scenarios = {Scenario::Interview, Scenario::Questionnaire, Scenario::SelfNarration};
  double depressed_prior = 0.5;
  std::string marker = "hopeless";
  double text_marker_prob = 1.0;  // per answer (per narration for S) of a depressed sample
  double text_leak_prob = 0.0;    // same, for control samples
  double audio_shift = 0.35;      // fractional downward shift of the voice pitch
  double au_variance_scale = 0.1;  // AU variance factor for depressed samples
  double missing_audio = 0.1;
  double missing_video = 0.1;
  double item_seconds_min = 0.8;  // duration of one answer / narration sentence
  double item_seconds_max = 1.2;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Deterministic for a given (spec, seed). Participants are spread over the
/// scenarios round robin with labels stratified per scenario and split.
std::vector<Sample> synth(const GenSpec& spec, std::uint64_t seed);

struct UnifyConfig {
  std::size_t sample_rate_hz = 16000;
  double fps = 30.0;
  std::size_t decimation = 6;
};

/// Linear-interpolation resampling to mono at the target rate, cue resampling to
/// the target fps, then keeping every `decimation`-th frame. Samples already at
/// the target (rate, mono, fps / decimation) are returned unchanged.
Sample unify_params(const Sample& s, const UnifyConfig& cfg);
Waveform resample_linear(const Waveform& w, std::size_t rate_hz);
Matrix resample_frames(const Matrix& m, double from_fps, double to_fps);

/// Synchronized segmentation into `win_s` windows; a trailing remainder is kept
/// iff it lasts at least `min_remainder_s`.
std::vector<Sample> window(const Sample& s, double win_s = 180.0, double min_remainder_s = 10.0);
/// Segment durations window() would produce for `duration_s`.
std::vector<double> window_lengths(double duration_s, double win_s = 180.0, double min_remainder_s = 10.0);

struct QaPair {
  std::string question;
  std::string answer;
};
/// Parses "Q: ... A: ..." text. Returns nothing when no pair is found.
std::optional<std::vector<QaPair>> parse_qa(std::string_view text);
std::string format_qa(const QaPair& p);

/// One sample per QA pair for I/Q samples; audio and cues are split evenly over
/// the pairs. Other samples pass through.
std::vector<Sample> qa_augment(const std::vector<Sample>& samples, std::vector<std::string>* warnings = nullptr);

/// Adds recombined QA instances of the minority class until the class counts
/// differ by at most one. Throws DataError on test-split input or when fewer than
/// two minority QA instances are available.
std::vector<Sample> qa_recombine(const std::vector<Sample>& train, std::uint64_t seed);

struct PrepConfig {
  UnifyConfig unify;
  double win_s = 180.0;
  double min_remainder_s = 10.0;
  bool qa_augment = true;
  bool qa_recombine = true;
};

struct PrepResult {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<std::string> warnings;
};

/// unify_params -> window -> qa_augment -> qa_recombine (train only), each split
/// sorted by id.
PrepResult prepare(const std::vector<Sample>& samples, const PrepConfig& cfg, std::uint64_t seed);

}  // namespace scd
