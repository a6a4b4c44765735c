#include "rfbn/run_dir.hpp"

#include "json.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rfbn {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw IoError("write failed for " + p.string());
}

std::string scoring_to_json(const ScoringInfo& s) {
  ojson j;
  j["features_path"] = s.features_path;
  j["scored"] = s.scored;
  j["candidates"] = s.candidates;
  j["low_snr"] = s.low_snr;
  return j.dump(2);
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fnv1a_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

std::string make_run_id(const PipelineConfig& config, const std::string& training_fingerprint,
                        const std::string& parent_run_id) {
  // the worker count never changes results, so it stays out of the id
  PipelineConfig c = config;
  c.workers = 1;
  c.forest.workers = 1;
  return fnv1a_hex(config_to_json(c) + '\n' + training_fingerprint + '\n' + parent_run_id).substr(0, 12);
}

std::string run_info_to_json(const RunInfo& info) {
  ojson j;
  j["format"] = "rfbn-run";
  j["version"] = 1;
  j["run_id"] = info.run_id;
  j["parent_run_id"] = info.parent_run_id.empty() ? ojson(nullptr) : ojson(info.parent_run_id);
  j["iteration"] = info.iteration;
  j["class_names"] = info.class_names;
  j["training_fingerprint"] = info.training_fingerprint;
  j["training_objects"] = info.training_objects;
  j["config"] = ojson::parse(config_to_json(info.config));
  return j.dump(2);
}

RunInfo run_info_from_json(const std::string& text) {
  RunInfo info;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "rfbn-run") throw MalformedInput("not a run.json");
    info.run_id = j.at("run_id").get<std::string>();
    if (!j.at("parent_run_id").is_null()) info.parent_run_id = j.at("parent_run_id").get<std::string>();
    info.iteration = j.at("iteration").get<int>();
    info.class_names = j.at("class_names").get<std::vector<std::string>>();
    info.training_fingerprint = j.at("training_fingerprint").get<std::string>();
    info.training_objects = j.at("training_objects").get<std::size_t>();
    info.config = config_from_json(j.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("malformed run.json: ") + e.what());
  }
  return info;
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

fs::path RunStore::path(const std::string& run_id) const { return root_ / run_id; }

bool RunStore::exists(const std::string& run_id) const {
  if (run_id.empty() || run_id.find_first_of("/\\.") != std::string::npos) return false;
  return fs::is_regular_file(path(run_id) / "run.json");
}

std::vector<RunInfo> RunStore::list() const {
  std::vector<RunInfo> runs;
  if (!fs::is_directory(root_)) return runs;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::is_regular_file(entry.path() / "run.json")) continue;
    runs.push_back(run_info_from_json(slurp(entry.path() / "run.json")));
  }
  std::sort(runs.begin(), runs.end(), [](const RunInfo& a, const RunInfo& b) {
    if (a.iteration != b.iteration) return a.iteration < b.iteration;
    return a.run_id < b.run_id;
  });
  return runs;
}

RunInfo RunStore::info(const std::string& run_id) const {
  if (!exists(run_id)) throw NotFound("unknown run '" + run_id + "'");
  return run_info_from_json(slurp(path(run_id) / "run.json"));
}

bool RunStore::scored(const std::string& run_id) const {
  return exists(run_id) && fs::is_regular_file(path(run_id) / "scoring.json");
}

ScoringInfo RunStore::scoring(const std::string& run_id) const {
  if (!scored(run_id)) throw NotFound("run '" + run_id + "' has not been scored");
  ScoringInfo s;
  try {
    const auto j = nlohmann::json::parse(slurp(path(run_id) / "scoring.json"));
    s.features_path = j.at("features_path").get<std::string>();
    s.scored = j.at("scored").get<std::size_t>();
    s.candidates = j.at("candidates").get<std::size_t>();
    s.low_snr = j.at("low_snr").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("malformed scoring.json: ") + e.what());
  }
  return s;
}

OutlierModel RunStore::model(const std::string& run_id) const {
  if (!exists(run_id)) throw NotFound("unknown run '" + run_id + "'");
  return load_model(path(run_id));
}

FeatureTable RunStore::training(const std::string& run_id) const {
  if (!exists(run_id)) throw NotFound("unknown run '" + run_id + "'");
  return read_feature_table(path(run_id) / "features.csv");
}

CandidateList RunStore::candidates(const std::string& run_id) const {
  if (!scored(run_id)) throw NotFound("run '" + run_id + "' has no candidate list");
  auto list = read_candidates(path(run_id) / "candidates.csv");
  for (auto& c : list.candidates) c.run_id = run_id;
  return list;
}

RunOutcome train_run(const RunStore& store, const FeatureTable& training, const PipelineConfig& config,
                     const std::string& parent_run_id, int iteration) {
  RunOutcome out;
  auto& info = out.info;
  info.training_fingerprint = fingerprint(training);
  info.run_id = make_run_id(config, info.training_fingerprint, parent_run_id);
  info.parent_run_id = parent_run_id;
  info.iteration = iteration;
  info.training_objects = training.size();
  // worker count never changes results; keep it out of persisted metadata
  info.config = config;
  info.config.workers = 1;
  info.config.forest.workers = 1;

  const fs::path dir = store.path(info.run_id);
  fs::create_directories(dir);
  write_feature_table(dir / "features.csv", training);

  auto trained = train(training, config);
  trained.report.run_id = info.run_id;
  trained.report.iteration = iteration;
  info.class_names = trained.model.class_names;
  trained.model.config = info.config;
  trained.report.config = info.config;

  try {
    save_model(dir, trained.model);
    spit(dir / "report.json", trained.report.to_json());
    spit(dir / "run.json", run_info_to_json(info));
  } catch (const Error& e) {
    throw StageError("persist", e.what(), std::string(to_string(e.kind())));
  }
  out.report = std::move(trained.report);
  return out;
}

ScoringInfo score_run(const RunStore& store, const std::string& run_id, const fs::path& features,
                      const ScoreOptions& options) {
  if (!store.exists(run_id)) throw NotFound("unknown run '" + run_id + "'");
  const auto model = store.model(run_id);
  const auto start = std::chrono::steady_clock::now();
  FeatureTableReader reader(features);
  auto result = score_batch(model, reader, options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (auto& c : result.candidates) c.run_id = run_id;
  const fs::path dir = store.path(run_id);
  write_candidates(dir / "candidates.csv", CandidateList{model.class_names, result.candidates});

  ScoringInfo s;
  s.features_path = fs::absolute(features).lexically_normal().string();
  s.scored = result.scored;
  s.candidates = result.candidates.size();
  s.low_snr = result.low_snr;
  spit(dir / "scoring.json", scoring_to_json(s));

  ojson report = fs::is_regular_file(dir / "report.json") ? ojson::parse(slurp(dir / "report.json")) : ojson::object();
  report["scored"] = s.scored;
  report["candidates"] = s.candidates;
  report["low_snr"] = s.low_snr;
  report["timing_seconds"]["score"] = seconds;
  if (seconds > 0) report["objects_per_second"] = static_cast<double>(s.scored) / seconds;
  spit(dir / "report.json", report.dump(2));
  return s;
}

RunOutcome retrain_run(const RunStore& store, const std::string& source_run_id,
                       const std::vector<ArtifactGroup>& groups, unsigned workers) {
  const auto source = store.info(source_run_id);
  const auto scoring = store.scoring(source_run_id);
  PipelineConfig config = source.config;
  config.workers = workers;
  config.forest.workers = workers;

  std::set<std::string> wanted;
  for (const auto& g : groups) wanted.insert(g.object_ids.begin(), g.object_ids.end());
  FeatureTable pool;
  {
    FeatureTableReader reader{fs::path(scoring.features_path)};
    FeatureRecord r;
    while (reader.next(r)) {
      if (wanted.count(r.object_id)) pool.rows.push_back(r);
    }
  }

  const auto augmented = add_artifact_classes(store.training(source_run_id), groups, pool, config.min_artifact_group);
  auto outcome = train_run(store, augmented, config, source_run_id, source.iteration + 1);
  auto options = score_options(config);
  score_run(store, outcome.info.run_id, scoring.features_path, options);
  return outcome;
}

FilterResult filter_run(const RunStore& store, const std::string& run_id, const FilterRequest& request) {
  const auto list = store.candidates(run_id);
  FilterResult result;
  result.kept = list.candidates;
  if (request.alias) {
    auto r = alias_filter(result.kept, request.tolerance);
    result.kept = std::move(r.kept);
    result.removed.insert(result.removed.end(), r.removed.begin(), r.removed.end());
    for (const auto& [k, v] : r.tally) result.tally["alias:" + k] += v;
  }
  if (!request.red_run_id.empty()) {
    const auto red = store.candidates(request.red_run_id);
    const std::size_t depth = request.depth ? *request.depth : proportional_depth(store.scoring(request.red_run_id).scored);
    auto r = cross_band_filter(result.kept, red.candidates, depth);
    result.kept = std::move(r.kept);
    result.removed.insert(result.removed.end(), r.removed.begin(), r.removed.end());
    for (const auto& [k, v] : r.tally) result.tally["cross_band:" + k] += v;
  }

  const fs::path dir = store.path(run_id);
  write_candidates(dir / "filtered.csv", CandidateList{list.class_names, result.kept});
  ojson report = fs::is_regular_file(dir / "report.json") ? ojson::parse(slurp(dir / "report.json")) : ojson::object();
  report["filter_tally"] = result.tally;
  report["filtered_candidates"] = result.kept.size();
  spit(dir / "report.json", report.dump(2));
  return result;
}

}  // namespace rfbn
