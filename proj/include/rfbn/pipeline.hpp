#pragma once

#include "rfbn/candidates.hpp"
#include "rfbn/feature_table.hpp"
#include "rfbn/forest.hpp"
#include "rfbn/vote_model.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rfbn {

struct PipelineConfig {
  ForestConfig forest;
  VoteModelConfig vote;
  FeatureOptions features;
  std::size_t top_m = 4000;
  std::size_t batch_size = 4096;
  unsigned workers = 1;
  double snr_floor = 3.0;
  int min_artifact_group = 5;
};

// JSON with every field; unknown keys are rejected so typos surface.
std::string config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const std::string& text, const PipelineConfig& base = {});

struct OutlierModel {
  Forest forest;
  VoteModel votes;
  FeatureValues impute_medians = FeatureValues::Zero();
  std::vector<std::string> class_names;
  std::string training_fingerprint;
  PipelineConfig config;
};

struct RunReport {
  std::string run_id;
  PipelineConfig config;
  std::vector<std::string> class_names;
  Eigen::MatrixXi oob_confusion;
  Vector per_class_f1;
  double macro_f = 0.0;
  std::size_t training_objects = 0;
  std::size_t zero_coverage = 0;
  std::size_t scored = 0;
  std::size_t candidates = 0;
  std::size_t low_snr = 0;
  std::size_t network_edges = 0;
  std::map<std::string, std::size_t> filter_tally;
  std::map<std::string, double> timing_seconds;
  std::vector<std::string> warnings;
  int iteration = 0;

  std::string to_json() const;
};

struct TrainResult {
  OutlierModel model;
  RunReport report;
  Matrix oob_votes;
};

// FNV-1a over the canonical CSV serialization of the table.
std::string fingerprint(const FeatureTable& table);

// Forest -> out-of-bag votes -> discretized network. Stage failures are
// rethrown as StageError naming the stage.
TrainResult train(const FeatureTable& training, const PipelineConfig& config);
TrainResult train(const TrainingManifest& manifest, const PipelineConfig& config);

// Bundle layout: forest.model, votemodel.json, model.json.
void save_model(const std::filesystem::path& dir, const OutlierModel& model);
OutlierModel load_model(const std::filesystem::path& dir);

// Votes, log joint and score for one object; rank left at 0.
CandidateRecord score_record(const OutlierModel& model, const FeatureRecord& record);

struct ScoreOptions {
  std::size_t top_m = 4000;
  std::size_t batch_size = 4096;
  unsigned workers = 1;
  double snr_floor = 3.0;
};

ScoreOptions score_options(const PipelineConfig& config);

struct ScoreResult {
  std::vector<CandidateRecord> candidates;  // ranked, at most top_m
  std::size_t scored = 0;
  std::size_t low_snr = 0;
};

// Pulls records until the source returns false. Memory is bounded by
// batch_size + top_m records; the ranking does not depend on `workers`.
using RecordSource = std::function<bool(FeatureRecord&)>;
ScoreResult score_batch(const OutlierModel& model, const RecordSource& source, const ScoreOptions& options);
ScoreResult score_batch(const OutlierModel& model, FeatureTableReader& reader, const ScoreOptions& options);
ScoreResult score_batch(const OutlierModel& model, const FeatureTable& table, const ScoreOptions& options);

struct LocoEntry {
  std::string object_id;
  std::string label;
  bool held = false;
  double log_joint = 0.0;
  double score = 0.0;
  std::size_t rank = 0;
};

struct LocoReport {
  std::string held_class;
  std::size_t total = 0;
  std::size_t held = 0;
  std::vector<LocoEntry> ranking;         // most outlying first
  std::vector<std::size_t> held_ranks;    // ascending, 1-based
  double macro_f = 0.0;

  // Held objects within the first `window` ranks.
  std::size_t held_in_top(std::size_t window) const;
  // found[r-1] = held objects within the top r; the ideal curve is min(r, held).
  std::vector<std::size_t> recovery_curve() const;
  std::string to_json() const;
};

// Trains without `held_class` and ranks every object. Training members
// are scored through their out-of-bag votes, held-out objects through the
// full forest.
LocoReport leave_one_class_out(const FeatureTable& table, const std::string& held_class,
                               const PipelineConfig& config);

struct ArtifactGroup {
  std::string name;
  std::vector<std::string> object_ids;
};

inline std::string artifact_class(const std::string& group) { return "artifact:" + group; }

// Training rows plus one relabeled copy of every group member found in
// `pool`. Groups need a non-empty unique name and at least `min_group`
// members with features, otherwise InvalidArgument.
FeatureTable add_artifact_classes(const FeatureTable& training, const std::vector<ArtifactGroup>& groups,
                                  const FeatureTable& pool, int min_group);

struct RetrainResult {
  TrainResult trained;
  FeatureTable training;  // previous training rows plus the artifact rows
  int iteration = 0;
};

// Adds one class per artifact group (rows looked up by object id in `pool`)
// and retrains from scratch.
RetrainResult retrain_with_artifacts(const FeatureTable& training, const std::vector<ArtifactGroup>& groups,
                                     const FeatureTable& pool, const PipelineConfig& config, int iteration = 1);

}  // namespace rfbn
