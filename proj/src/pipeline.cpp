#include "rfbn/pipeline.hpp"

#include "csv.hpp"
#include "json.hpp"
#include "rfbn/errors.hpp"
#include "rfbn/parallel.hpp"
#include "rfbn/run_dir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace rfbn {

using ojson = nlohmann::ordered_json;

namespace {

const char* order_name(NodeOrder o) { return o == NodeOrder::class_order ? "class_order" : "descending_entropy"; }
const char* binning_name(Binning b) { return b == Binning::equal_width ? "equal_width" : "quantile"; }
const char* estimator_name(MapEstimator e) {
  return e == MapEstimator::posterior_mean ? "posterior_mean" : "dirichlet_mode";
}

NodeOrder parse_order(const std::string& s) {
  if (s == "class_order") return NodeOrder::class_order;
  if (s == "descending_entropy") return NodeOrder::descending_entropy;
  throw InvalidArgument("unknown node order '" + s + "'");
}
Binning parse_binning(const std::string& s) {
  if (s == "equal_width") return Binning::equal_width;
  if (s == "quantile") return Binning::quantile;
  throw InvalidArgument("unknown binning '" + s + "'");
}
MapEstimator parse_estimator(const std::string& s) {
  if (s == "posterior_mean") return MapEstimator::posterior_mean;
  if (s == "dirichlet_mode") return MapEstimator::dirichlet_mode;
  throw InvalidArgument("unknown estimator '" + s + "'");
}

ojson config_json(const PipelineConfig& c) {
  ojson j;
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"n_split_features", c.forest.n_split_features},
                 {"min_node_size", c.forest.min_node_size},
                 {"seed", c.forest.seed}};
  j["vote"] = {{"n_bins", c.vote.n_bins},
               {"max_parents", c.vote.max_parents},
               {"alpha", c.vote.alpha},
               {"order", order_name(c.vote.order)},
               {"binning", binning_name(c.vote.binning)},
               {"estimator", estimator_name(c.vote.estimator)}};
  j["features"] = {{"min_frequency", c.features.grid.min_frequency},
                   {"max_frequency", c.features.grid.max_frequency},
                   {"oversampling", c.features.grid.oversampling},
                   {"pair_slope_window", c.features.pair_slope_window}};
  j["top_m"] = c.top_m;
  j["batch_size"] = c.batch_size;
  j["workers"] = c.workers;
  j["snr_floor"] = c.snr_floor;
  j["min_artifact_group"] = c.min_artifact_group;
  return j;
}

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw InvalidArgument("unknown config key '" + where + key + "'");
    }
  }
}

template <typename Fn>
auto run_stage(const std::string& stage, std::map<std::string, double>& timing, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timing[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      auto result = fn();
      timing[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return result;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what(), std::string(to_string(e.kind())));
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::vector<std::string> distinct_labels(const FeatureTable& table) {
  std::vector<std::string> classes;
  for (const auto& r : table.rows) {
    if (std::find(classes.begin(), classes.end(), r.label) == classes.end()) classes.push_back(r.label);
  }
  return classes;
}

}  // namespace

std::string config_to_json(const PipelineConfig& config) { return config_json(config).dump(2); }

PipelineConfig config_from_json(const std::string& text, const PipelineConfig& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c = base;
  try {
    check_keys(j, {"forest", "vote", "features", "top_m", "batch_size", "workers", "snr_floor", "min_artifact_group"}, "");
    if (j.contains("forest")) {
      const auto& f = j["forest"];
      check_keys(f, {"n_trees", "n_split_features", "min_node_size", "seed"}, "forest.");
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      c.forest.n_split_features = f.value("n_split_features", c.forest.n_split_features);
      c.forest.min_node_size = f.value("min_node_size", c.forest.min_node_size);
      c.forest.seed = f.value("seed", c.forest.seed);
    }
    if (j.contains("vote")) {
      const auto& v = j["vote"];
      check_keys(v, {"n_bins", "max_parents", "alpha", "order", "binning", "estimator"}, "vote.");
      c.vote.n_bins = v.value("n_bins", c.vote.n_bins);
      c.vote.max_parents = v.value("max_parents", c.vote.max_parents);
      c.vote.alpha = v.value("alpha", c.vote.alpha);
      if (v.contains("order")) c.vote.order = parse_order(v["order"].get<std::string>());
      if (v.contains("binning")) c.vote.binning = parse_binning(v["binning"].get<std::string>());
      if (v.contains("estimator")) c.vote.estimator = parse_estimator(v["estimator"].get<std::string>());
    }
    if (j.contains("features")) {
      const auto& f = j["features"];
      check_keys(f, {"min_frequency", "max_frequency", "oversampling", "pair_slope_window"}, "features.");
      c.features.grid.min_frequency = f.value("min_frequency", c.features.grid.min_frequency);
      c.features.grid.max_frequency = f.value("max_frequency", c.features.grid.max_frequency);
      c.features.grid.oversampling = f.value("oversampling", c.features.grid.oversampling);
      c.features.pair_slope_window = f.value("pair_slope_window", c.features.pair_slope_window);
    }
    c.top_m = j.value("top_m", c.top_m);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.workers = j.value("workers", c.workers);
    c.snr_floor = j.value("snr_floor", c.snr_floor);
    c.min_artifact_group = j.value("min_artifact_group", c.min_artifact_group);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
  c.forest.workers = c.workers;
  return c;
}

std::string RunReport::to_json() const {
  ojson j;
  j["run_id"] = run_id;
  j["iteration"] = iteration;
  j["config"] = config_json(config);
  j["class_names"] = class_names;
  j["training_objects"] = training_objects;
  j["oob_zero_coverage"] = zero_coverage;
  j["macro_f_score"] = macro_f;
  std::vector<std::optional<double>> f1;
  for (Eigen::Index c = 0; c < per_class_f1.size(); ++c) {
    f1.push_back(std::isfinite(per_class_f1[c]) ? std::optional<double>(per_class_f1[c]) : std::nullopt);
  }
  ojson per_class = ojson::array();
  for (const auto& v : f1) per_class.push_back(v ? ojson(*v) : ojson(nullptr));
  j["per_class_f1"] = per_class;
  ojson confusion = ojson::array();
  for (Eigen::Index r = 0; r < oob_confusion.rows(); ++r) {
    std::vector<int> row(static_cast<std::size_t>(oob_confusion.cols()));
    for (Eigen::Index c = 0; c < oob_confusion.cols(); ++c) row[static_cast<std::size_t>(c)] = oob_confusion(r, c);
    confusion.push_back(row);
  }
  j["oob_confusion"] = confusion;
  j["network_edges"] = network_edges;
  j["scored"] = scored;
  j["candidates"] = candidates;
  j["low_snr"] = low_snr;
  j["filter_tally"] = filter_tally;
  j["timing_seconds"] = timing_seconds;
  j["warnings"] = warnings;
  return j.dump(2);
}

std::string fingerprint(const FeatureTable& table) {
  std::ostringstream out;
  write_feature_table(out, table);
  return fnv1a_hex(out.str());
}

TrainResult train(const FeatureTable& training, const PipelineConfig& config) {
  const auto classes = distinct_labels(training);
  if (classes.size() < 2) {
    throw InvalidArgument("training set has " + std::to_string(classes.size()) + " class(es); at least 2 are required");
  }
  for (const auto& c : classes) {
    if (c.empty()) throw InvalidArgument("training set contains unlabeled rows");
  }

  TrainResult out;
  auto& report = out.report;
  report.config = config;
  report.class_names = classes;
  report.training_objects = training.size();

  const auto data = run_stage("features", report.timing_seconds, [&] { return feature_matrix(training, classes); });
  report.warnings = data.imputation.warnings;

  ForestConfig fcfg = config.forest;
  fcfg.workers = config.workers;
  auto forest = run_stage("forest", report.timing_seconds,
                          [&] { return train_forest(data.features, data.labels, classes, fcfg); });
  report.zero_coverage = static_cast<std::size_t>(
      std::count(forest.oob_coverage.begin(), forest.oob_coverage.end(), 0));
  if (report.zero_coverage > 0) {
    report.warnings.push_back(std::to_string(report.zero_coverage) +
                              " object(s) had no out-of-bag trees; full-forest votes used");
  }

  run_stage("oob_evaluation", report.timing_seconds, [&] {
    const auto f = macro_f_score(forest.oob_votes, data.labels);
    report.macro_f = f.macro;
    report.per_class_f1 = f.per_class;
    report.oob_confusion = f.confusion;
    report.warnings.insert(report.warnings.end(), f.warnings.begin(), f.warnings.end());
  });

  auto votes = run_stage("vote_model", report.timing_seconds,
                         [&] { return fit_vote_model(forest.oob_votes, classes, config.vote); });
  report.network_edges = votes.structure.num_edges();

  out.oob_votes = forest.oob_votes;
  out.model.forest = std::move(forest);
  out.model.votes = std::move(votes);
  out.model.impute_medians = data.imputation.medians;
  out.model.class_names = classes;
  out.model.training_fingerprint = fingerprint(training);
  out.model.config = config;
  return out;
}

TrainResult train(const TrainingManifest& manifest, const PipelineConfig& config) {
  std::map<std::string, double> timing;
  const auto table = run_stage("extract_features", timing, [&] {
    return extract_feature_table(manifest, config.features, config.workers);
  });
  auto result = train(table, config);
  result.report.timing_seconds.insert(timing.begin(), timing.end());
  return result;
}

void save_model(const std::filesystem::path& dir, const OutlierModel& model) {
  std::filesystem::create_directories(dir);
  save_forest(dir / "forest.model", model.forest);
  save_vote_model(dir / "votemodel.json", model.votes);
  ojson j;
  j["format"] = "rfbn-model";
  j["version"] = 1;
  j["class_names"] = model.class_names;
  j["feature_names"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
  j["impute_medians"] = std::vector<double>(model.impute_medians.data(), model.impute_medians.data() + kNumFeatures);
  j["training_fingerprint"] = model.training_fingerprint;
  j["config"] = config_json(model.config);
  std::ofstream out(dir / "model.json");
  if (!out) throw IoError("cannot write " + (dir / "model.json").string());
  out << j.dump(2) << '\n';
}

OutlierModel load_model(const std::filesystem::path& dir) {
  OutlierModel m;
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("cannot open " + (dir / "model.json").string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(buf.str());
    if (j.at("format") != "rfbn-model") throw MalformedInput("not a model bundle");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    const auto names = j.at("feature_names").get<std::vector<std::string>>();
    if (names.size() != kFeatureNames.size() || !std::equal(names.begin(), names.end(), kFeatureNames.begin())) {
      throw InvalidArgument("model was trained on a different feature schema");
    }
    const auto medians = j.at("impute_medians").get<std::vector<double>>();
    if (medians.size() != static_cast<std::size_t>(kNumFeatures)) throw MalformedInput("bad impute_medians");
    for (int f = 0; f < kNumFeatures; ++f) m.impute_medians[f] = medians[static_cast<std::size_t>(f)];
    m.training_fingerprint = j.at("training_fingerprint").get<std::string>();
    m.config = config_from_json(j.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("malformed model.json: ") + e.what());
  }
  m.forest = load_forest(dir / "forest.model");
  m.votes = load_vote_model(dir / "votemodel.json");
  if (m.forest.class_names != m.class_names || m.votes.class_names != m.class_names) {
    throw MalformedInput("forest and vote model disagree on the class list");
  }
  return m;
}

CandidateRecord score_record(const OutlierModel& model, const FeatureRecord& record) {
  CandidateRecord c;
  c.object_id = record.object_id;
  c.features = record.features;
  const FeatureValues x = impute(record.features, model.impute_medians);
  c.votes = predict_votes(model.forest, x.data());
  c.log_joint = model.votes.log_joint(c.votes);
  c.score = score_from_log_joint(c.log_joint);
  c.period = record.features.valid(Feature::period) ? record.features[Feature::period]
                                                    : std::numeric_limits<double>::quiet_NaN();
  c.band = record.band;
  c.path = record.path;
  c.ra_deg = record.ra_deg;
  c.dec_deg = record.dec_deg;
  c.mean_mag = record.mean_mag;
  c.snr = record.snr;
  return c;
}

ScoreOptions score_options(const PipelineConfig& config) {
  return {config.top_m, config.batch_size, config.workers, config.snr_floor};
}

ScoreResult score_batch(const OutlierModel& model, const RecordSource& source, const ScoreOptions& options) {
  struct Entry {
    CandidateRecord record;
    std::size_t seq;
  };
  // Heap front is the least outlying retained entry.
  auto weaker = [](const Entry& a, const Entry& b) {
    if (outranks(a.record, b.record)) return true;
    if (outranks(b.record, a.record)) return false;
    return a.seq < b.seq;
  };

  const std::size_t limit = options.top_m == 0 ? std::numeric_limits<std::size_t>::max() : options.top_m;
  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  const unsigned workers = resolve_workers(options.workers);

  ScoreResult result;
  std::vector<Entry> heap;
  std::vector<FeatureRecord> batch;
  std::vector<CandidateRecord> scored;
  batch.reserve(batch_size);
  bool more = true;
  while (more) {
    batch.clear();
    FeatureRecord r;
    while (batch.size() < batch_size && (more = source(r))) batch.push_back(std::move(r));
    if (batch.empty()) break;
    scored.resize(batch.size());
    parallel_for(batch.size(), workers, [&](std::size_t i) { scored[i] = score_record(model, batch[i]); });
    for (std::size_t i = 0; i < scored.size(); ++i) {
      auto& c = scored[i];
      c.low_snr = c.snr < options.snr_floor;
      if (c.low_snr) ++result.low_snr;
      Entry e{std::move(c), result.scored++};
      if (heap.size() < limit) {
        heap.push_back(std::move(e));
        std::push_heap(heap.begin(), heap.end(), weaker);
      } else if (weaker(e, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), weaker);
        heap.back() = std::move(e);
        std::push_heap(heap.begin(), heap.end(), weaker);
      }
    }
  }
  std::sort_heap(heap.begin(), heap.end(), weaker);
  result.candidates.reserve(heap.size());
  for (auto& e : heap) result.candidates.push_back(std::move(e.record));
  for (std::size_t i = 0; i < result.candidates.size(); ++i) result.candidates[i].rank = i + 1;
  return result;
}

ScoreResult score_batch(const OutlierModel& model, FeatureTableReader& reader, const ScoreOptions& options) {
  return score_batch(model, [&](FeatureRecord& r) { return reader.next(r); }, options);
}

ScoreResult score_batch(const OutlierModel& model, const FeatureTable& table, const ScoreOptions& options) {
  std::size_t next = 0;
  return score_batch(
      model,
      [&](FeatureRecord& r) {
        if (next >= table.rows.size()) return false;
        r = table.rows[next++];
        return true;
      },
      options);
}

std::size_t LocoReport::held_in_top(std::size_t window) const {
  return static_cast<std::size_t>(
      std::count_if(held_ranks.begin(), held_ranks.end(), [&](std::size_t r) { return r <= window; }));
}

std::vector<std::size_t> LocoReport::recovery_curve() const {
  std::vector<std::size_t> found(ranking.size(), 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (ranking[i].held) ++count;
    found[i] = count;
  }
  return found;
}

std::string LocoReport::to_json() const {
  ojson j;
  j["held_class"] = held_class;
  j["total"] = total;
  j["held"] = held;
  j["training_macro_f_score"] = macro_f;
  j["held_ranks"] = held_ranks;
  const auto found = recovery_curve();
  ojson curve = ojson::array();
  for (std::size_t r = 1; r <= found.size(); ++r) {
    if (r <= 4 * held || r % 50 == 0 || r == found.size()) {
      curve.push_back({{"rank", r}, {"found", found[r - 1]}, {"ideal", std::min(r, held)}});
    }
  }
  j["recovery_curve"] = curve;
  return j.dump(2);
}

LocoReport leave_one_class_out(const FeatureTable& table, const std::string& held_class,
                               const PipelineConfig& config) {
  FeatureTable trained_rows;
  FeatureTable held_rows;
  for (const auto& r : table.rows) (r.label == held_class ? held_rows : trained_rows).rows.push_back(r);
  if (held_rows.rows.empty()) throw InvalidArgument("held-out class '" + held_class + "' is not in the table");
  if (held_rows.size() < 2) throw InvalidArgument("held-out class '" + held_class + "' needs at least 2 members");

  const auto trained = train(trained_rows, config);
  LocoReport report;
  report.held_class = held_class;
  report.total = table.size();
  report.held = held_rows.size();
  report.macro_f = trained.report.macro_f;
  report.ranking.reserve(table.size());
  for (std::size_t i = 0; i < trained_rows.size(); ++i) {
    const auto& r = trained_rows.rows[i];
    const double lj = trained.model.votes.log_joint(Vector(trained.oob_votes.row(static_cast<Eigen::Index>(i)).transpose()));
    report.ranking.push_back({r.object_id, r.label, false, lj, score_from_log_joint(lj), 0});
  }
  for (const auto& r : held_rows.rows) {
    const auto c = score_record(trained.model, r);
    report.ranking.push_back({r.object_id, r.label, true, c.log_joint, c.score, 0});
  }
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [](const LocoEntry& a, const LocoEntry& b) {
    if (a.log_joint != b.log_joint) return a.log_joint < b.log_joint;
    return a.object_id < b.object_id;
  });
  for (std::size_t i = 0; i < report.ranking.size(); ++i) {
    report.ranking[i].rank = i + 1;
    if (report.ranking[i].held) report.held_ranks.push_back(i + 1);
  }
  return report;
}

FeatureTable add_artifact_classes(const FeatureTable& training, const std::vector<ArtifactGroup>& groups,
                                  const FeatureTable& pool, int min_group) {
  std::unordered_map<std::string, const FeatureRecord*> by_id;
  for (const auto& r : pool.rows) by_id.emplace(r.object_id, &r);

  FeatureTable out = training;
  std::set<std::string> names;
  for (const auto& g : groups) {
    if (g.name.empty()) throw InvalidArgument("artifact group name is empty");
    if (!names.insert(g.name).second) throw InvalidArgument("duplicate artifact group '" + g.name + "'");
    std::vector<const FeatureRecord*> members;
    std::set<std::string> seen;
    for (const auto& id : g.object_ids) {
      const auto it = by_id.find(id);
      if (it != by_id.end() && seen.insert(id).second) members.push_back(it->second);
    }
    if (static_cast<int>(members.size()) < min_group) {
      throw InvalidArgument("artifact group '" + g.name + "' has " + std::to_string(members.size()) +
                            " member(s) with features; minimum is " + std::to_string(min_group));
    }
    for (const auto* m : members) {
      FeatureRecord r = *m;
      r.label = artifact_class(g.name);
      out.rows.push_back(std::move(r));
    }
  }
  return out;
}

RetrainResult retrain_with_artifacts(const FeatureTable& training, const std::vector<ArtifactGroup>& groups,
                                     const FeatureTable& pool, const PipelineConfig& config, int iteration) {
  RetrainResult out;
  out.training = add_artifact_classes(training, groups, pool, config.min_artifact_group);
  out.iteration = iteration;
  out.trained = train(out.training, config);
  out.trained.report.iteration = iteration;
  return out;
}

}  // namespace rfbn
