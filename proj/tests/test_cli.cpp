#include "rfbn/cli.hpp"
#include "rfbn/run_dir.hpp"
#include "rfbn/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rfbn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result rfbn_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string run_id_of(const std::string& out) {
  const auto pos = out.rfind("run_id ");
  REQUIRE(pos != std::string::npos);
  return out.substr(pos + 7, 12);
}

FeatureTable labeled_table(std::uint64_t seed) {
  const auto means = synthetic::class_means(3, 5.0, 2);
  return synthetic::gaussian_table({{"a", 60, means[0], 1.0}, {"b", 60, means[1], 1.0}, {"c", 60, means[2], 1.0}}, seed);
}

}  // namespace

TEST_CASE("help exits 0 and documents defaults") {
  const auto top = rfbn_cli({"--help"});
  CHECK(top.code == 0);
  CHECK(top.out.find("evaluate-loco") != std::string::npos);
  const auto train = rfbn_cli({"train", "--help"});
  CHECK(train.code == 0);
  for (const char* flag : {"--trees", "--bins", "--max-parents", "--alpha", "--seed", "--jobs", "--config"}) {
    CHECK(train.out.find(flag) != std::string::npos);
  }
  CHECK(train.out.find("500") != std::string::npos);
  for (const char* sub : {"extract-features", "score", "evaluate-loco", "filter", "crossmatch", "cluster", "retrain", "serve"}) {
    CHECK(rfbn_cli({sub, "--help"}).code == 0);
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(rfbn_cli({}).code == 2);
  CHECK(rfbn_cli({"train", "--no-such-flag"}).code == 2);
  CHECK(rfbn_cli({"frobnicate"}).code == 2);
  CHECK(rfbn_cli({"train", "--trees", "many"}).code == 2);
  CHECK(rfbn_cli({"train", "--manifest", "/does/not/exist.csv"}).code == 2);
}

TEST_CASE("config precedence: flag over file over default") {
  const auto dir = fresh_dir("rfbn_cli_config");
  std::ofstream(dir / "cfg.json") << R"({"forest":{"n_trees":123,"seed":9},"vote":{"alpha":2.0}})";
  const auto r = rfbn_cli({"train", "--print-config", "--config", (dir / "cfg.json").string(), "--trees", "50"});
  REQUIRE(r.code == 0);
  const auto cfg = config_from_json(r.out);
  CHECK(cfg.forest.n_trees == 50);
  CHECK(cfg.forest.seed == 9);
  CHECK(cfg.vote.alpha == 2.0);
  CHECK(cfg.vote.n_bins == 20);
  const auto defaults = config_from_json(rfbn_cli({"train", "--print-config"}).out);
  CHECK(defaults.forest.n_trees == 500);
  CHECK(defaults.vote.max_parents == 2);
  CHECK(defaults.vote.alpha == 4.0);

  std::ofstream(dir / "typo.json") << R"({"forest":{"trees":5}})";
  const auto bad = rfbn_cli({"train", "--print-config", "--config", (dir / "typo.json").string()});
  CHECK(bad.code == 1);
}

TEST_CASE("a failing stage exits 1 naming the stage and category") {
  const auto dir = fresh_dir("rfbn_cli_stage");
  write_feature_table(dir / "train.csv", labeled_table(1));
  const auto r = rfbn_cli({"--run-dir", (dir / "runs").string(), "train", "--features", (dir / "train.csv").string(),
                      "--trees", "20", "--bins", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("stage=vote_model") != std::string::npos);
  CHECK(r.err.find("category=InvalidArgument") != std::string::npos);
  const auto missing = rfbn_cli({"--run-dir", (dir / "runs").string(), "score", "--run", "000000000000", "--features",
                            (dir / "train.csv").string()});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("category=NotFound") != std::string::npos);
}

TEST_CASE("train and score through the CLI match the library") {
  const auto dir = fresh_dir("rfbn_cli_train");
  const auto training = labeled_table(1);
  write_feature_table(dir / "train.csv", training);
  auto survey = labeled_table(2);
  for (auto& r : survey.rows) r.label.clear();
  write_feature_table(dir / "survey.csv", survey);

  const auto runs = (dir / "runs").string();
  const auto t = rfbn_cli({"--run-dir", runs, "train", "--features", (dir / "train.csv").string(), "--trees", "40",
                      "--seed", "7", "--jobs", "2"});
  REQUIRE(t.code == 0);
  const auto id = run_id_of(t.out);
  const auto s = rfbn_cli({"--run-dir", runs, "score", "--run", id, "--features", (dir / "survey.csv").string(), "--top-m", "50"});
  REQUIRE(s.code == 0);
  CHECK(s.out.find("scored 180") != std::string::npos);

  PipelineConfig cfg;
  cfg.forest.n_trees = 40;
  cfg.forest.seed = 7;
  const RunStore lib_store(dir / "lib");
  const auto lib = train_run(lib_store, training, cfg);
  CHECK(lib.info.run_id == id);
  ScoreOptions opts = score_options(cfg);
  opts.top_m = 50;
  score_run(lib_store, lib.info.run_id, dir / "survey.csv", opts);
  CHECK(slurp(dir / "runs" / id / "candidates.csv") == slurp(dir / "lib" / id / "candidates.csv"));
  CHECK(slurp(dir / "runs" / id / "run.json") == slurp(dir / "lib" / id / "run.json"));

  // score takes the run's saved config as the base
  const auto printed_out = rfbn_cli({"--run-dir", runs, "score", "--run", id, "--print-config", "--features",
                                     (dir / "survey.csv").string()}).out;
  const auto printed = config_from_json(printed_out.substr(0, printed_out.find("\n}\n") + 3));
  CHECK(printed.forest.n_trees == 40);
}

TEST_CASE("train from a manifest twice gives identical artifacts") {
  const auto dir = fresh_dir("rfbn_cli_manifest");
  synthetic::SurveySpec spec;
  spec.per_class = 8;
  spec.points = 100;
  const auto paths = synthetic::write_survey(dir / "survey", spec, 3);
  std::vector<std::string> ids;
  for (const char* sub : {"a", "b"}) {
    const auto r = rfbn_cli({"--run-dir", (dir / sub).string(), "train", "--manifest", paths.training_manifest.string(),
                        "--seed", "7", "--trees", "30"});
    REQUIRE(r.code == 0);
    ids.push_back(run_id_of(r.out));
  }
  CHECK(ids[0] == ids[1]);
  for (const char* f : {"run.json", "model.json", "forest.model", "votemodel.json", "features.csv"}) {
    CHECK(slurp(dir / "a" / ids[0] / f) == slurp(dir / "b" / ids[1] / f));
  }
}

TEST_CASE("the run directory defaults from the environment") {
  const auto dir = fresh_dir("rfbn_cli_env");
  write_feature_table(dir / "train.csv", labeled_table(1));
  ::setenv("RFBN_RUN_DIR", (dir / "envruns").string().c_str(), 1);
  const auto r = rfbn_cli({"train", "--features", (dir / "train.csv").string(), "--trees", "10"});
  ::unsetenv("RFBN_RUN_DIR");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "envruns" / run_id_of(r.out) / "run.json"));
}

TEST_CASE("leave-one-class-out through the CLI matches the library report") {
  const auto dir = fresh_dir("rfbn_cli_loco");
  const auto means = synthetic::class_means(3, 5.0, 4);
  const auto table = synthetic::gaussian_table({{"a", 100, means[0], 1.0},
                                                {"b", 100, means[1], 1.0},
                                                {"c", 100, means[2], 1.0},
                                                {"quasar", 10, synthetic::mixed_mean(means, {0, 1, 2}), 1.0}},
                                               5);
  write_feature_table(dir / "loco.csv", table);
  const auto r = rfbn_cli({"evaluate-loco", "--features", (dir / "loco.csv").string(), "--hold", "quasar", "--trees", "40",
                      "--out", (dir / "report.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("of 10 in the top 35") != std::string::npos);
  PipelineConfig cfg;
  cfg.forest.n_trees = 40;
  CHECK(slurp(dir / "report.json") == leave_one_class_out(table, "quasar", cfg).to_json() + "\n");
}

TEST_CASE("alias filter logs the single aliased candidate") {
  const auto dir = fresh_dir("rfbn_cli_filter");
  CandidateList list;
  list.class_names = {"a", "b"};
  const double periods[] = {0.9973, 0.7, 3.2, 12.0};
  for (std::size_t i = 0; i < 4; ++i) {
    CandidateRecord c;
    c.object_id = "c" + std::to_string(i);
    c.rank = i + 1;
    c.log_joint = -10.0 + static_cast<double>(i);
    c.score = -std::expm1(c.log_joint);
    c.period = periods[i];
    c.features.set(Feature::period, periods[i]);
    c.votes = Vector::Constant(2, 0.5);
    list.candidates.push_back(c);
  }
  write_candidates(dir / "cands.csv", list);
  const auto r = rfbn_cli({"filter", "--candidates", (dir / "cands.csv").string(), "--alias", "--tolerance", "0.01", "--out",
                      (dir / "out.csv").string()});
  REQUIRE(r.code == 0);
  std::size_t removals = 0;
  for (std::size_t pos = r.out.find("removed c"); pos != std::string::npos; pos = r.out.find("removed c", pos + 1)) ++removals;
  CHECK(removals == 1);
  CHECK(r.out.find("removed c0 period 0.9973") != std::string::npos);
  CHECK(read_candidates(dir / "out.csv").candidates.size() == 3);
}

TEST_CASE("crossmatch and cluster write their tables") {
  const auto dir = fresh_dir("rfbn_cli_post");
  CandidateList list;
  list.class_names = {"a", "b"};
  for (std::size_t i = 0; i < 12; ++i) {
    CandidateRecord c;
    c.object_id = "c" + std::to_string(i);
    c.rank = i + 1;
    c.ra_deg = 80.0 + 0.01 * static_cast<double>(i);
    c.dec_deg = -69.0;
    c.votes = Vector::Constant(2, 0.5);
    c.features.set(Feature::period, i < 6 ? 0.5 : 50.0);
    c.features.set(Feature::color, i < 6 ? 0.1 : 1.5);
    c.period = c.features[Feature::period];
    c.mean_mag = 17.0;
    list.candidates.push_back(c);
  }
  write_candidates(dir / "cands.csv", list);
  std::ofstream(dir / "cat.csv") << "id,ra_deg,dec_deg,label\nq1,80.0001,-69,QSO\n";
  const auto x = rfbn_cli({"crossmatch", "--candidates", (dir / "cands.csv").string(), "--catalog", (dir / "cat.csv").string(),
                      "--out", (dir / "xm.csv").string()});
  REQUIRE(x.code == 0);
  CHECK(slurp(dir / "xm.csv").find("QSO") != std::string::npos);
  const auto k = rfbn_cli({"cluster", "--candidates", (dir / "cands.csv").string(), "--k", "2", "--out",
                      (dir / "cmd.csv").string()});
  REQUIRE(k.code == 0);
  CHECK(slurp(dir / "cmd.csv").rfind("id,rank,score,color,mean_mag,cluster", 0) == 0);
}

TEST_CASE("retrain through the CLI uses the label log") {
  const auto dir = fresh_dir("rfbn_cli_retrain");
  const auto runs = dir / "runs";
  write_feature_table(dir / "train.csv", labeled_table(1));
  auto survey = labeled_table(2);
  for (auto& r : survey.rows) r.label.clear();
  write_feature_table(dir / "survey.csv", survey);
  const auto id = run_id_of(rfbn_cli({"--run-dir", runs.string(), "train", "--features", (dir / "train.csv").string(),
                                 "--trees", "30"}).out);
  REQUIRE(rfbn_cli({"--run-dir", runs.string(), "score", "--run", id, "--features", (dir / "survey.csv").string()}).code == 0);
  const auto cands = RunStore(runs).candidates(id).candidates;
  {
    std::ofstream log(runs / "labels.jsonl");
    for (std::size_t i = 0; i < 6; ++i) {
      log << R"({"id":")" << cands[i].object_id << R"(","label":"artifact:junk","reviewer":"r","timestamp":"2024-01-01T00:00:00Z","run_id":")"
          << id << "\"}\n";
    }
  }
  const auto r = rfbn_cli({"--run-dir", runs.string(), "retrain", "--run", id, "--group", "junk"});
  REQUIRE(r.code == 0);
  const auto child = run_id_of(r.out);
  CHECK(RunStore(runs).info(child).class_names.size() == 4);
  CHECK(RunStore(runs).info(child).parent_run_id == id);
  const auto small = rfbn_cli({"--run-dir", runs.string(), "retrain", "--run", id, "--group", "empty"});
  CHECK(small.code == 1);
}
