#pragma once

#include "rfbn/filters.hpp"
#include "rfbn/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rfbn {

std::uint64_t fnv1a(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

// Deterministic: hash of resolved config, training fingerprint and parent.
std::string make_run_id(const PipelineConfig& config, const std::string& training_fingerprint,
                        const std::string& parent_run_id);

// run.json; no timestamps so identical inputs give identical bytes.
struct RunInfo {
  std::string run_id;
  std::string parent_run_id;  // empty for a first run
  int iteration = 0;
  std::vector<std::string> class_names;
  std::string training_fingerprint;
  std::size_t training_objects = 0;
  PipelineConfig config;
};

// scoring.json, written when a run's candidate list is produced.
struct ScoringInfo {
  std::string features_path;  // absolute
  std::size_t scored = 0;
  std::size_t candidates = 0;
  std::size_t low_snr = 0;
};

std::string run_info_to_json(const RunInfo& info);
RunInfo run_info_from_json(const std::string& text);

// A directory of runs, one subdirectory per run_id:
//   run.json model.json forest.model votemodel.json features.csv report.json
//   candidates.csv scoring.json (after scoring)
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& run_id) const;
  bool exists(const std::string& run_id) const;

  // Sorted by iteration, then run_id.
  std::vector<RunInfo> list() const;
  RunInfo info(const std::string& run_id) const;  // NotFound
  ScoringInfo scoring(const std::string& run_id) const;
  bool scored(const std::string& run_id) const;
  OutlierModel model(const std::string& run_id) const;
  FeatureTable training(const std::string& run_id) const;
  CandidateList candidates(const std::string& run_id) const;

 private:
  std::filesystem::path root_;
};

struct RunOutcome {
  RunInfo info;
  RunReport report;
};

// Trains and persists a run. features.csv is written before training starts
// so a failing stage still leaves the inputs behind.
RunOutcome train_run(const RunStore& store, const FeatureTable& training, const PipelineConfig& config,
                     const std::string& parent_run_id = {}, int iteration = 0);

// Scores a feature table file with the run's model and writes candidates.csv,
// scoring.json and an updated report.json.
ScoringInfo score_run(const RunStore& store, const std::string& run_id, const std::filesystem::path& features,
                      const ScoreOptions& options);

// Retrains the source run with one extra class per group (rows taken from the
// source run's scoring table), then rescores that table into a new run.
RunOutcome retrain_run(const RunStore& store, const std::string& source_run_id,
                       const std::vector<ArtifactGroup>& groups, unsigned workers = 1);

struct FilterRequest {
  bool alias = false;
  AliasTolerance tolerance;
  std::string red_run_id;            // empty: no cross-band filter
  std::optional<std::size_t> depth;  // default: proportional to the red run's scored count
};

// Applies the requested filters to the run's candidates in order (alias,
// then cross-band), writes filtered.csv and records the tally in report.json.
FilterResult filter_run(const RunStore& store, const std::string& run_id, const FilterRequest& request);

}  // namespace rfbn
