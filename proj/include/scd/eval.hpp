#pragma once

// Confusion counts and metrics, participant-level voting, evaluation under a
// modality configuration, and report rendering (json / csv / markdown).

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/model.hpp"

namespace scd {

/// Positive class = depressed. Error predictions are kept apart by true class.
struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t err_dep = 0, err_ctl = 0;

  std::size_t error_count() const { return err_dep + err_ctl; }
  std::size_t total() const { return tp + fp + fn + tn + error_count(); }
  void add(int truth, Label predicted);
  Confusion& operator+=(const Confusion& o);
};

struct Metrics {
  // Macro averages over the classes that occur in the truth or the predictions.
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Depressed class alone.
  double pos_precision = 0.0;
  double pos_recall = 0.0;
  double pos_f1 = 0.0;
};

/// Errors count as misclassifications of their true class; 0/0 is 0. Throws
/// std::invalid_argument on an empty confusion.
Metrics metrics(const Confusion& c);

/// Depressed iff a strict majority of the non-Error labels is Depressed;
/// all-Error -> Error. Throws std::invalid_argument on an empty list.
Label vote(std::span<const Label> preds);

struct ModalityConfig {
  bool audio = true;
  bool video = true;

  std::string name() const;  // "T+A+V", "T+A", "T+V" or "T"
  static ModalityConfig parse(std::string_view name);
};

struct RoutingCounts {
  std::array<std::size_t, 4> by_path{};  // indexed by PathChoice

  std::size_t& operator[](PathChoice p) { return by_path[static_cast<std::size_t>(p)]; }
  std::size_t operator[](PathChoice p) const { return by_path[static_cast<std::size_t>(p)]; }
};

struct DatasetResult {
  Confusion segments;
  Confusion participants;
  RoutingCounts routing;
};

struct ParticipantVote {
  std::string participant_id;
  std::string dataset;
  int label = 0;
  Label vote = Label::Error;
  std::vector<Label> segments;
};

struct EvalReport {
  std::string modality;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, DatasetResult> datasets;  // per dataset plus "ALL"
  std::vector<Prediction> predictions;
  std::vector<ParticipantVote> votes;
};

/// Aggregates per-segment predictions into the report. Throws DataError when a
/// participant's segments disagree on the label.
EvalReport aggregate(std::vector<Prediction> predictions, const std::string& modality, const std::string& config_hash,
                     std::uint64_t seed);

/// Drops the modalities `mc` excludes, predicts every sample, votes per participant.
EvalReport evaluate(Model& m, const std::vector<Sample>& samples, const ModalityConfig& mc, std::uint64_t seed);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

std::string report_csv(const std::vector<EvalReport>& reports);
std::string report_markdown(const std::vector<EvalReport>& reports);
/// report.json, report.csv and report.md in `dir`. Reports are ordered by
/// modality name. Throws DataError when a file cannot be written.
void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& dir);

}  // namespace scd
