#include "rfbn/cli.hpp"

#include "CLI11.hpp"
#include "rfbn/clustering.hpp"
#include "rfbn/crossmatch.hpp"
#include "rfbn/errors.hpp"
#include "rfbn/filters.hpp"
#include "rfbn/pipeline.hpp"
#include "rfbn/run_dir.hpp"
#include "rfbn/triage_service.hpp"

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace rfbn::cli {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Flags that override the resolved config. Each flag applies only when given,
// so the precedence is flags > --config file > defaults.
struct ConfigFlags {
  std::string config_file;
  bool print_config = false;
  unsigned jobs = 1;

  int trees = 500;
  int split_features = 0;
  int min_node_size = 1;
  std::uint64_t seed = 0;
  int bins = 20;
  int max_parents = 2;
  double alpha = 4.0;
  std::string order = "class_order";
  std::string binning = "equal_width";
  std::string estimator = "posterior_mean";
  double fmin = 0.0;
  double fmax = 10.0;
  double oversampling = 5.0;
  int pair_window = 30;
  std::size_t top_m = 4000;
  std::size_t batch_size = 4096;
  double snr_floor = 3.0;
  int min_group = 5;

  std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&)>>> appliers;

  template <typename T, typename Fn>
  void flag(CLI::App* app, const std::string& name, T& value, const std::string& help, Fn apply) {
    auto* opt = app->add_option(name, value, help)->capture_default_str();
    appliers.emplace_back(opt, [&value, apply](PipelineConfig& c) { apply(c, value); });
  }

  PipelineConfig resolve(const PipelineConfig& base) const {
    PipelineConfig c = base;
    if (!config_file.empty()) c = config_from_json(slurp(config_file), c);
    for (const auto& [opt, apply] : appliers) {
      if (opt->count() > 0) apply(c);
    }
    c.forest.workers = c.workers;
    return c;
  }
};

void add_common(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config_file, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  app->add_flag("--print-config", f.print_config, "Print the resolved config as JSON");
  f.flag(app, "--jobs,-j", f.jobs, "Worker threads (0 = all cores)", [](PipelineConfig& c, unsigned v) { c.workers = v; });
}

void add_feature_flags(CLI::App* app, ConfigFlags& f) {
  f.flag(app, "--fmin", f.fmin, "Lowest periodogram frequency, cycles/day (0 = 1/baseline)",
         [](PipelineConfig& c, double v) { c.features.grid.min_frequency = v; });
  f.flag(app, "--fmax", f.fmax, "Highest periodogram frequency, cycles/day",
         [](PipelineConfig& c, double v) { c.features.grid.max_frequency = v; });
  f.flag(app, "--oversampling", f.oversampling, "Periodogram oversampling factor",
         [](PipelineConfig& c, double v) { c.features.grid.oversampling = v; });
  f.flag(app, "--pair-slope-window", f.pair_window, "Points used by the pair slope trend feature",
         [](PipelineConfig& c, int v) { c.features.pair_slope_window = v; });
}

void add_model_flags(CLI::App* app, ConfigFlags& f) {
  f.flag(app, "--trees", f.trees, "Number of trees", [](PipelineConfig& c, int v) { c.forest.n_trees = v; });
  f.flag(app, "--split-features", f.split_features, "Features sampled per split (0 = floor(sqrt(13)))",
         [](PipelineConfig& c, int v) { c.forest.n_split_features = v; });
  f.flag(app, "--min-node-size", f.min_node_size, "Nodes at or below this size become leaves",
         [](PipelineConfig& c, int v) { c.forest.min_node_size = v; });
  f.flag(app, "--seed", f.seed, "Random seed", [](PipelineConfig& c, std::uint64_t v) { c.forest.seed = v; });
  f.flag(app, "--bins", f.bins, "Vote discretization bins", [](PipelineConfig& c, int v) { c.vote.n_bins = v; });
  f.flag(app, "--max-parents", f.max_parents, "Maximum parents per network node",
         [](PipelineConfig& c, int v) { c.vote.max_parents = v; });
  f.flag(app, "--alpha", f.alpha, "Dirichlet pseudo-count", [](PipelineConfig& c, double v) { c.vote.alpha = v; });
  f.flag(app, "--order", f.order, "Node order: class_order | descending_entropy",
         [](PipelineConfig& c, const std::string& v) {
           c = config_from_json(R"({"vote":{"order":")" + v + "\"}}", c);
         });
  f.flag(app, "--binning", f.binning, "Bin edges: equal_width | quantile",
         [](PipelineConfig& c, const std::string& v) {
           c = config_from_json(R"({"vote":{"binning":")" + v + "\"}}", c);
         });
  f.flag(app, "--estimator", f.estimator, "CPD estimate: posterior_mean | dirichlet_mode",
         [](PipelineConfig& c, const std::string& v) {
           c = config_from_json(R"({"vote":{"estimator":")" + v + "\"}}", c);
         });
  f.flag(app, "--min-group", f.min_group, "Minimum members per artifact group",
         [](PipelineConfig& c, int v) { c.min_artifact_group = v; });
}

void add_score_flags(CLI::App* app, ConfigFlags& f) {
  f.flag(app, "--top-m", f.top_m, "Candidates kept (0 = all)", [](PipelineConfig& c, std::size_t v) { c.top_m = v; });
  f.flag(app, "--batch-size", f.batch_size, "Records read per scoring batch",
         [](PipelineConfig& c, std::size_t v) { c.batch_size = v; });
  f.flag(app, "--snr-floor", f.snr_floor, "Candidates below this SNR are flagged low_snr",
         [](PipelineConfig& c, double v) { c.snr_floor = v; });
}

std::string default_run_dir() {
  const char* env = std::getenv("RFBN_RUN_DIR");
  return env && *env ? env : "runs";
}

FeatureTable load_table(const std::string& manifest, const std::string& features, bool labeled,
                        const PipelineConfig& config) {
  if (!features.empty()) return read_feature_table(features);
  return extract_feature_table(read_manifest(manifest, labeled), config.features, config.workers);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::vector<CandidateRecord> load_candidates(const RunStore& store, const std::string& run_id,
                                             const std::string& file, std::vector<std::string>* classes = nullptr) {
  auto list = file.empty() ? store.candidates(run_id) : read_candidates(fs::path(file));
  if (classes) *classes = list.class_names;
  return std::move(list.candidates);
}

fs::path output_path(const std::string& given, const RunStore& store, const std::string& run_id,
                     const std::string& fallback) {
  if (!given.empty()) return given;
  if (run_id.empty()) throw InvalidArgument("--out is required when --candidates is used");
  return store.path(run_id) / fallback;
}

std::atomic<TriageService*> g_service{nullptr};

extern "C" void handle_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Random-forest / Bayesian-network outlier detection for light curves", "rfbn"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", "rfbn 1.0.0");

  std::string run_dir = default_run_dir();
  app.add_option("--run-dir", run_dir, "Directory holding run subdirectories (env RFBN_RUN_DIR)")
      ->capture_default_str();

  std::string stage;
  std::function<void()> action;

  // extract-features
  ConfigFlags ef;
  std::string ef_manifest, ef_out;
  auto* extract = app.add_subcommand("extract-features", "Compute the feature table of a manifest");
  extract->add_option("--manifest", ef_manifest, "Manifest CSV (id,path,label,ra_deg,dec_deg[,red_path])")
      ->required()
      ->check(CLI::ExistingFile);
  extract->add_option("--out", ef_out, "Output feature table CSV")->required();
  add_common(extract, ef);
  add_feature_flags(extract, ef);
  extract->callback([&] {
    action = [&] {
      const auto cfg = ef.resolve({});
      if (ef.print_config) out << config_to_json(cfg) << '\n';
      const auto table = load_table(ef_manifest, "", false, cfg);
      write_feature_table(fs::path(ef_out), table);
      out << "extracted features for " << table.size() << " objects -> " << ef_out << '\n';
    };
  });

  // train
  ConfigFlags tf;
  std::string tr_manifest, tr_features;
  auto* train_cmd = app.add_subcommand("train", "Train the forest and vote model; writes a new run");
  auto* tm = train_cmd->add_option("--manifest", tr_manifest, "Labeled manifest CSV")->check(CLI::ExistingFile);
  train_cmd->add_option("--features", tr_features, "Labeled feature table CSV instead of a manifest")
      ->check(CLI::ExistingFile)
      ->excludes(tm);
  add_common(train_cmd, tf);
  add_feature_flags(train_cmd, tf);
  add_model_flags(train_cmd, tf);
  add_score_flags(train_cmd, tf);
  train_cmd->callback([&] {
    action = [&] {
      const auto cfg = tf.resolve({});
      if (tf.print_config) out << config_to_json(cfg) << '\n';
      if (tr_manifest.empty() && tr_features.empty()) {
        if (tf.print_config) return;
        throw CLI::RequiredError("--manifest or --features");
      }
      stage = "extract_features";
      const auto table = load_table(tr_manifest, tr_features, true, cfg);
      stage = "train";
      const RunStore store(run_dir);
      const auto outcome = train_run(store, table, cfg);
      out << "trained on " << outcome.info.training_objects << " objects, " << outcome.info.class_names.size()
          << " classes, OOB macro F " << fmt(outcome.report.macro_f) << ", " << outcome.report.network_edges
          << " network edges\n";
      out << "run_id " << outcome.info.run_id << '\n';
    };
  });

  // score
  ConfigFlags sf;
  std::string sc_run, sc_manifest, sc_features;
  auto* score_cmd = app.add_subcommand("score", "Score objects with a trained run; writes candidates.csv");
  score_cmd->add_option("--run", sc_run, "Run id")->required();
  auto* sm = score_cmd->add_option("--manifest", sc_manifest, "Manifest of objects to score")->check(CLI::ExistingFile);
  score_cmd->add_option("--features", sc_features, "Feature table of objects to score")
      ->check(CLI::ExistingFile)
      ->excludes(sm);
  add_common(score_cmd, sf);
  add_score_flags(score_cmd, sf);
  score_cmd->callback([&] {
    action = [&] {
      const RunStore store(run_dir);
      const auto info = store.info(sc_run);
      const auto cfg = sf.resolve(info.config);
      if (sf.print_config) out << config_to_json(cfg) << '\n';
      if (sc_manifest.empty() && sc_features.empty()) throw CLI::RequiredError("--manifest or --features");
      fs::path features = sc_features;
      if (!sc_manifest.empty()) {
        stage = "extract_features";
        const auto table = load_table(sc_manifest, "", false, cfg);
        features = store.path(sc_run) / "scoring_features.csv";
        write_feature_table(features, table);
      }
      stage = "score";
      const auto s = score_run(store, sc_run, features, score_options(cfg));
      out << "scored " << s.scored << " objects, kept " << s.candidates << " candidates (" << s.low_snr
          << " low SNR)\n";
      out << "run_id " << sc_run << '\n';
    };
  });

  // evaluate-loco
  ConfigFlags lf;
  std::string lo_manifest, lo_features, lo_hold, lo_out;
  auto* loco = app.add_subcommand("evaluate-loco", "Leave one class out and report where it ranks");
  auto* lm = loco->add_option("--manifest", lo_manifest, "Labeled manifest CSV")->check(CLI::ExistingFile);
  loco->add_option("--features", lo_features, "Labeled feature table CSV")->check(CLI::ExistingFile)->excludes(lm);
  loco->add_option("--hold", lo_hold, "Class to hold out")->required();
  loco->add_option("--out", lo_out, "Report JSON (default <run-dir>/loco-<class>.json)");
  add_common(loco, lf);
  add_feature_flags(loco, lf);
  add_model_flags(loco, lf);
  loco->callback([&] {
    action = [&] {
      const auto cfg = lf.resolve({});
      if (lf.print_config) out << config_to_json(cfg) << '\n';
      if (lo_manifest.empty() && lo_features.empty()) throw CLI::RequiredError("--manifest or --features");
      stage = "extract_features";
      const auto table = load_table(lo_manifest, lo_features, true, cfg);
      stage = "evaluate_loco";
      const auto report = leave_one_class_out(table, lo_hold, cfg);
      const fs::path path = lo_out.empty() ? fs::path(run_dir) / ("loco-" + lo_hold + ".json") : fs::path(lo_out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      std::ofstream f(path);
      if (!f) throw IoError("cannot write " + path.string());
      f << report.to_json() << '\n';
      const auto window = static_cast<std::size_t>(3.5 * static_cast<double>(report.held));
      out << "held class '" << lo_hold << "': " << report.held_in_top(window) << " of " << report.held
          << " in the top " << window << " of " << report.total << " -> " << path.string() << '\n';
    };
  });

  // filter
  std::string fi_run, fi_candidates, fi_red_run, fi_out;
  bool fi_alias = false;
  double fi_tol = 0.01;
  std::size_t fi_depth = 0;
  auto* filter = app.add_subcommand("filter", "Remove period aliases and candidates missing from the red list");
  auto* fr = filter->add_option("--run", fi_run, "Run id whose candidates are filtered");
  filter->add_option("--candidates", fi_candidates, "Candidate CSV instead of a run")
      ->check(CLI::ExistingFile)
      ->excludes(fr);
  filter->add_flag("--alias", fi_alias, "Drop sidereal/solar day, harmonics and one-year periods");
  filter->add_option("--tolerance", fi_tol, "Relative alias tolerance")->capture_default_str();
  filter->add_option("--cross-band", fi_red_run, "Red-band run id to intersect with");
  auto* depth_opt = filter->add_option("--depth", fi_depth, "Red-list depth (default 0.1% of scored objects)");
  filter->add_option("--out", fi_out, "Output CSV (default <run>/filtered.csv)");
  filter->callback([&] {
    action = [&] {
      stage = "filter";
      if (fi_run.empty() && fi_candidates.empty()) throw CLI::RequiredError("--run or --candidates");
      const RunStore store(run_dir);
      FilterResult result;
      if (!fi_run.empty() && fi_out.empty()) {
        FilterRequest req;
        req.alias = fi_alias;
        req.tolerance.relative = fi_tol;
        req.red_run_id = fi_red_run;
        if (depth_opt->count()) req.depth = fi_depth;
        result = filter_run(store, fi_run, req);
        fi_out = (store.path(fi_run) / "filtered.csv").string();
      } else {
        std::vector<std::string> classes;
        result.kept = load_candidates(store, fi_run, fi_candidates, &classes);
        if (fi_alias) {
          AliasTolerance tol;
          tol.relative = fi_tol;
          auto r = alias_filter(result.kept, tol);
          result.kept = std::move(r.kept);
          for (const auto& [k, v] : r.tally) result.tally["alias:" + k] += v;
          result.removed.insert(result.removed.end(), r.removed.begin(), r.removed.end());
        }
        if (!fi_red_run.empty()) {
          const std::size_t depth =
              depth_opt->count() ? fi_depth : proportional_depth(store.scoring(fi_red_run).scored);
          auto r = cross_band_filter(result.kept, store.candidates(fi_red_run).candidates, depth);
          result.kept = std::move(r.kept);
          for (const auto& [k, v] : r.tally) result.tally["cross_band:" + k] += v;
          result.removed.insert(result.removed.end(), r.removed.begin(), r.removed.end());
        }
        write_candidates(output_path(fi_out, store, fi_run, "filtered.csv"), CandidateList{classes, result.kept});
      }
      for (const auto& c : result.removed) {
        out << "removed " << c.object_id << " period " << fmt(c.period, 8) << '\n';
      }
      out << "kept " << result.kept.size() << ", removed " << result.removed.size();
      for (const auto& [k, v] : result.tally) out << ", " << k << '=' << v;
      out << " -> " << fi_out << '\n';
    };
  });

  // crossmatch
  std::string cm_run, cm_candidates, cm_catalog, cm_out;
  double cm_radius = 2.0;
  auto* xmatch = app.add_subcommand("crossmatch", "Match candidates to a local catalog by position");
  auto* cr = xmatch->add_option("--run", cm_run, "Run id");
  xmatch->add_option("--candidates", cm_candidates, "Candidate CSV instead of a run")
      ->check(CLI::ExistingFile)
      ->excludes(cr);
  xmatch->add_option("--catalog", cm_catalog, "Catalog CSV (ra_deg,dec_deg,label[,id])")
      ->required()
      ->check(CLI::ExistingFile);
  xmatch->add_option("--radius", cm_radius, "Match radius in arcsec")->capture_default_str();
  xmatch->add_option("--out", cm_out, "Output CSV (default <run>/crossmatch-<catalog>.csv)");
  xmatch->callback([&] {
    action = [&] {
      stage = "crossmatch";
      if (cm_run.empty() && cm_candidates.empty()) throw CLI::RequiredError("--run or --candidates");
      const RunStore store(run_dir);
      const auto candidates = load_candidates(store, cm_run, cm_candidates);
      const auto catalog = read_catalog(fs::path(cm_catalog));
      const auto report = crossmatch(candidates, catalog, cm_radius);
      const auto path = output_path(cm_out, store, cm_run, "crossmatch-" + catalog.name + ".csv");
      std::ofstream f(path);
      if (!f) throw IoError("cannot write " + path.string());
      write_crossmatch(f, candidates, report);
      out << "matched " << report.matched << " of " << candidates.size() << " candidates in " << catalog.name
          << " (" << report.skipped_catalog_rows << " catalog rows skipped) -> " << path.string() << '\n';
    };
  });

  // cluster
  std::string cl_run, cl_candidates, cl_out;
  int cl_k = 0;
  std::uint64_t cl_seed = 0;
  auto* cluster = app.add_subcommand("cluster", "Cluster candidates and export a color-magnitude table");
  auto* clr = cluster->add_option("--run", cl_run, "Run id");
  cluster->add_option("--candidates", cl_candidates, "Candidate CSV instead of a run")
      ->check(CLI::ExistingFile)
      ->excludes(clr);
  auto* k_opt = cluster->add_option("--k", cl_k, "Number of clusters (default: best silhouette over 2..10)")
                    ->check(CLI::PositiveNumber);
  cluster->add_option("--seed", cl_seed, "Random seed")->capture_default_str();
  cluster->add_option("--out", cl_out, "Output CSV (default <run>/cmd_export.csv)");
  cluster->callback([&] {
    action = [&] {
      stage = "cluster";
      if (cl_run.empty() && cl_candidates.empty()) throw CLI::RequiredError("--run or --candidates");
      const RunStore store(run_dir);
      const auto candidates = load_candidates(store, cl_run, cl_candidates);
      const auto result =
          cluster_candidates(candidates, k_opt->count() ? std::optional<int>(cl_k) : std::nullopt, cl_seed);
      const auto path = output_path(cl_out, store, cl_run, "cmd_export.csv");
      std::ofstream f(path);
      if (!f) throw IoError("cannot write " + path.string());
      write_cmd_export(f, candidates, result);
      out << "clustered " << candidates.size() << " candidates into k=" << result.k << " (silhouette "
          << fmt(result.silhouette) << ") -> " << path.string() << '\n';
    };
  });

  // retrain
  std::string rt_run, rt_labels;
  std::vector<std::string> rt_groups;
  unsigned rt_jobs = 1;
  auto* retrain = app.add_subcommand("retrain", "Add labeled artifact groups as classes and retrain a run");
  retrain->add_option("--run", rt_run, "Source run id")->required();
  retrain->add_option("--group", rt_groups, "Artifact group name (repeatable)")->required();
  retrain->add_option("--labels", rt_labels, "Label log (default <run-dir>/labels.jsonl)");
  retrain->add_option("--jobs,-j", rt_jobs, "Worker threads (0 = all cores)")->capture_default_str();
  retrain->callback([&] {
    action = [&] {
      stage = "retrain";
      const RunStore store(run_dir);
      const auto info = store.info(rt_run);
      const LabelLog log(rt_labels.empty() ? store.root() / "labels.jsonl" : fs::path(rt_labels));
      const auto groups = groups_from_labels(LabelLog::state(log.replay(), rt_run), rt_groups);
      const auto outcome = retrain_run(store, rt_run, groups, rt_jobs);
      out << "retrained with " << groups.size() << " artifact group(s): " << outcome.info.class_names.size()
          << " classes, iteration " << outcome.info.iteration << ", parent " << rt_run << '\n';
      out << "run_id " << outcome.info.run_id << '\n';
    };
  });

  // serve
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  std::string sv_token;
  unsigned sv_jobs = 1;
  auto* serve = app.add_subcommand("serve", "Serve candidates, labels and retrain jobs over HTTP");
  serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv_port, "Port (0 = any free port)")->capture_default_str();
  serve->add_option("--token", sv_token, "Shared X-Auth-Token (env RFBN_TOKEN); empty disables auth")
      ->envname("RFBN_TOKEN");
  serve->add_option("--jobs,-j", sv_jobs, "Worker threads for retrain jobs")->capture_default_str();
  serve->callback([&] {
    action = [&] {
      stage = "serve";
      ServiceOptions opts;
      opts.auth_token = sv_token;
      opts.workers = sv_jobs;
      TriageService service(RunStore(run_dir), opts);
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::thread announce([&] {
        if (service.wait_until_listening(std::chrono::seconds(10))) {
          out << "serving " << run_dir << " on http://" << sv_host << ':' << service.bound_port() << std::endl;
        }
      });
      try {
        service.serve(sv_host, sv_port);
      } catch (...) {
        announce.join();
        g_service = nullptr;
        throw;
      }
      announce.join();
      g_service = nullptr;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    action();
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  } catch (const StageError& e) {
    err << "error: stage=" << e.stage() << " category=" << e.category() << ": " << e.what() << '\n';
  } catch (const Error& e) {
    err << "error: stage=" << stage << " category=" << to_string(e.kind()) << ": " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: stage=" << stage << " category=Internal: " << e.what() << '\n';
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace rfbn::cli
