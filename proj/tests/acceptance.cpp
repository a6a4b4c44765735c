// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "rfbn/feature_table.hpp"
#include "rfbn/filters.hpp"
#include "rfbn/forest.hpp"
#include "rfbn/periodogram.hpp"
#include "rfbn/pipeline.hpp"
#include "rfbn/run_dir.hpp"
#include "rfbn/synthetic.hpp"
#include "rfbn/vote_model.hpp"

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rfbn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// Nearest-rank quantile, so any monotone transform of the data commutes with it.
double order_statistic(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

long max_rss_kb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return u.ru_maxrss;
}

PipelineConfig seeded(std::uint64_t seed) {
  PipelineConfig c;
  c.forest.seed = seed;
  return c;
}

Outcome parameter_count_exact() {
  bool ok = parameter_count(2, 2) == 4 && parameter_count(20, 2) == 7600 && parameter_count(20, 0) == 19;
  // storage audit on a fitted three-node model with one and two parents
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> bin(0, 19);
  BinMatrix data(400, 3);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    data(i, 0) = bin(rng);
    data(i, 1) = data(i, 0);
    data(i, 2) = (data(i, 0) + data(i, 1)) % 20;
  }
  NetworkStructure s{{0, 1, 2}, {{}, {0}, {0, 1}}, 2};
  const auto cpds = fit_cpds(s, data, 20, 4.0);
  for (const auto& c : cpds) {
    const auto pa = static_cast<int>(c.parents.size());
    ok = ok && c.free_parameters() == parameter_count(20, pa) &&
         c.stored_cells() == static_cast<std::uint64_t>(std::pow(20, pa + 1));
  }
  return {ok, "(2,2)=" + std::to_string(parameter_count(2, 2)) + " (20,2)=" + std::to_string(parameter_count(20, 2)) +
                  " cells=" + std::to_string(cpds[2].stored_cells())};
}

Outcome map_fidelity() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> counts(0, 60);
  std::uniform_real_distribution<double> alphas(0.1, 10.0);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int n1 = counts(rng);
    const int n2 = counts(rng);
    const double a = alphas(rng);
    // log posterior theta^(N1+a) (1-theta)^(N2+a); bisection on its log-derivative
    auto slope = [&](double th) { return (n1 + a) / th - (n2 + a) / (1.0 - th); };
    double lo = 1e-15, hi = 1.0 - 1e-15;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) > 0.0 ? lo : hi) = mid;
    }
    const double numeric = 0.5 * (lo + hi);

    BinMatrix data(n1 + n2 == 0 ? 0 : n1 + n2, 1);
    for (int i = 0; i < n1 + n2; ++i) data(i, 0) = i < n1 ? 0 : 1;
    NetworkStructure s{{0}, {{}}, 0};
    const double fitted = fit_cpds(s, data, 2, a)[0].probs(0, 0);
    const double closed = (n1 + a) / (n1 + n2 + 2.0 * a);
    worst = std::max({worst, std::abs(closed - numeric), std::abs(fitted - numeric)});
  }
  return {worst <= 1e-8, fmt("max |closed - numeric| = %.2e over 20 triples", worst)};
}

Outcome joint_normalization() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> bin(0, 3);
    std::uniform_int_distribution<int> n_rows(30, 300);
    const int n = n_rows(rng);
    Matrix votes(n, 3);
    for (int i = 0; i < n; ++i) {
      const int b0 = bin(rng);
      const int b1 = bin(rng) < 2 ? b0 : bin(rng);
      const int b2 = bin(rng) < 2 ? (b0 + b1) % 4 : bin(rng);
      votes(i, 0) = (b0 + 0.5) / 4.0;
      votes(i, 1) = (b1 + 0.5) / 4.0;
      votes(i, 2) = (b2 + 0.5) / 4.0;
    }
    VoteModelConfig cfg;
    cfg.n_bins = 4;
    cfg.alpha = std::uniform_real_distribution<double>(0.5, 6.0)(rng);
    const auto model = fit_vote_model(votes, {"a", "b", "c"}, cfg);
    double total = 0.0;
    Eigen::VectorXi bins(3);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int c = 0; c < 4; ++c) {
          bins << a, b, c;
          total += std::exp(model.log_joint(bins));
        }
      }
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {worst <= 1e-9, fmt("max |sum - 1| = %.2e over 10 datasets", worst)};
}

// Direct-count Dirichlet-multinomial log marginal likelihood.
double k2_by_counting(int child, const std::vector<int>& parents, const BinMatrix& data, int n_bins, double alpha) {
  std::map<std::vector<int>, std::vector<double>> rows;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    std::vector<int> key;
    for (int p : parents) key.push_back(data(i, p));
    auto& r = rows[key];
    r.resize(static_cast<std::size_t>(n_bins), 0.0);
    r[static_cast<std::size_t>(data(i, child))] += 1.0;
  }
  double score = 0.0;
  for (const auto& [key, r] : rows) {
    double total = 0.0;
    for (double c : r) total += c;
    score += std::lgamma(n_bins * alpha) - std::lgamma(total + n_bins * alpha);
    for (double c : r) score += std::lgamma(c + alpha) - std::lgamma(alpha);
  }
  return score;
}

Outcome k2_oracle() {
  double worst = 0.0;
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::uniform_int_distribution<int> bin(0, 2);
    BinMatrix data(200, 4);
    for (Eigen::Index i = 0; i < 200; ++i) {
      data(i, 0) = bin(rng);
      data(i, 1) = data(i, 0);  // planted deterministic copy
      data(i, 2) = bin(rng);
      data(i, 3) = bin(rng) == 0 ? data(i, 2) : bin(rng);
    }
    const double alpha = 4.0;
    for (int child = 0; child < 4; ++child) {
      std::vector<int> others;
      for (int p = 0; p < 4; ++p) {
        if (p != child) others.push_back(p);
      }
      std::vector<std::vector<int>> families{{}};
      for (std::size_t a = 0; a < others.size(); ++a) {
        families.push_back({others[a]});
        for (std::size_t b = a + 1; b < others.size(); ++b) families.push_back({others[a], others[b]});
      }
      for (const auto& pa : families) {
        const double lib = k2_local_score(child, pa, data, 3, alpha);
        worst = std::max(worst, std::abs(lib - k2_by_counting(child, pa, data, 3, alpha)));
      }
    }
    const auto search = learn_structure(data, {0, 1, 2, 3}, 2, 3, alpha);
    const auto& pa1 = search.structure.parents[1];
    if (std::find(pa1.begin(), pa1.end(), 0) != pa1.end()) ++recovered;
  }
  return {worst <= 1e-10 && recovered == 10,
          fmt("max |lib - oracle| = %.2e, ", worst) + "planted parent recovered " + std::to_string(recovered) + "/10"};
}

Outcome oob_contract() {
  const auto means = synthetic::class_means(3, 3.0, 21);
  const auto table = synthetic::gaussian_table(
      {{"a", 700, means[0], 1.0}, {"b", 700, means[1], 1.0}, {"c", 600, means[2], 1.0}}, 22);
  const auto data = feature_matrix(table);
  ForestConfig cfg;
  cfg.n_trees = 500;
  cfg.seed = 3;
  const auto forest = train_forest(data.features, data.labels, data.classes, cfg);
  std::size_t in_bag = 0;
  std::size_t contributions = 0;
  const auto oob = oob_vote_matrix(forest, data.features, [&](std::size_t object, std::size_t tree) {
    ++contributions;
    if (forest.trees[tree].in_bag(static_cast<std::uint32_t>(object))) ++in_bag;
  });
  double mean = 0.0;
  for (int c : oob.coverage) mean += c;
  mean /= static_cast<double>(oob.coverage.size());
  const bool ok = mean >= 170.0 && mean <= 200.0 && in_bag == 0 &&
                  contributions == static_cast<std::size_t>(mean * static_cast<double>(oob.coverage.size()) + 0.5);
  return {ok, fmt("mean coverage %.2f (R/e = 183.94), ", mean) + std::to_string(in_bag) + " in-bag contributions of " +
                  std::to_string(contributions)};
}

Outcome forest_sanity() {
  int passed = 0;
  std::string scores;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto means = synthetic::class_means(3, 4.0, 200 + seed);
    const auto table = synthetic::gaussian_table(
        {{"a", 300, means[0], 1.0}, {"b", 300, means[1], 1.0}, {"c", 300, means[2], 1.0}}, 300 + seed);
    const auto data = feature_matrix(table);
    ForestConfig cfg;
    cfg.seed = seed;
    const auto forest = train_forest(data.features, data.labels, data.classes, cfg);
    const double f = macro_f_score(forest.oob_votes, data.labels).macro;
    if (f >= 0.95) ++passed;
    scores += fmt(" %.4f", f);
  }
  return {passed == 5, "OOB macro F per seed:" + scores};
}

struct LocoSummary {
  int positive_pass = 0;
  int negative_pass = 0;
  int separation_pass = 0;
  std::string positive;
  std::string negative;
  std::string separation;
};

LocoSummary run_loco() {
  LocoSummary s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto report = leave_one_class_out(synthetic::loco_fixture(seed), "held", seeded(seed));
    const std::size_t window = 175;
    const auto found = report.held_in_top(window);
    if (found * 10 >= report.held * 9) ++s.positive_pass;
    s.positive += " " + std::to_string(found) + "/" + std::to_string(report.held);

    // score separation, compared on log joint (score = 1 - exp(log_joint) is
    // strictly decreasing in it and saturates near 1 in double precision)
    std::map<std::string, std::vector<double>> by_class;
    for (const auto& e : report.ranking) by_class[e.label].push_back(-e.log_joint);
    const double held_median = order_statistic(by_class["held"], 0.5);
    double worst_p90 = -1e300;
    for (const auto& [label, v] : by_class) {
      if (label != "held") worst_p90 = std::max(worst_p90, order_statistic(v, 0.9));
    }
    if (held_median > worst_p90) ++s.separation_pass;
    s.separation += fmt(" %.2f", held_median) + fmt(">%.2f", worst_p90);

    const auto control = leave_one_class_out(synthetic::loco_fixture(seed, true), "held", seeded(seed));
    const auto found_control = control.held_in_top(window);
    if (found_control * 10 < control.held * 3) ++s.negative_pass;
    s.negative += " " + std::to_string(found_control) + "/" + std::to_string(control.held);
  }
  return s;
}

Outcome alias_fixture() {
  const std::vector<double> periods{0.9973, 1.0, 0.5, 365.0, 370.0, 0.7, 3.2, 12.0, 0.33, 0.25};
  std::vector<CandidateRecord> candidates;
  for (std::size_t i = 0; i < periods.size(); ++i) {
    CandidateRecord c;
    c.object_id = "p" + std::to_string(i);
    c.period = periods[i];
    c.rank = i + 1;
    candidates.push_back(c);
  }
  AliasTolerance tol;
  tol.relative = 0.02;  // the 370 d case sits at 1.3% from a year
  const auto r = alias_filter(candidates, tol);
  std::set<double> removed;
  for (const auto& c : r.removed) removed.insert(c.period);
  const std::set<double> expected{0.9973, 1.0, 0.5, 365.0, 370.0, 0.33};
  std::string list;
  for (double p : removed) list += fmt(" %g", p);
  return {removed == expected && r.kept.size() == 4, "removed" + list};
}

Outcome retrain_loop() {
  int passed = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fx = synthetic::retrain_fixture(seed);
    auto cfg = seeded(seed);
    ScoreOptions opts;
    opts.top_m = 0;

    auto rank_of = [&](const ScoreResult& r) {
      std::map<std::string, std::size_t> ranks;
      for (const auto& c : r.candidates) ranks[c.object_id] = c.rank;
      std::vector<std::size_t> out;
      for (const auto& id : fx.artifact_ids) out.push_back(ranks.at(id));
      return out;
    };
    const auto first = train(fx.training, cfg);
    const auto before = rank_of(score_batch(first.model, fx.survey, opts));
    const auto retrained = retrain_with_artifacts(fx.training, {{"glitch", fx.artifact_ids}}, fx.survey, cfg);
    const auto after = rank_of(score_batch(retrained.trained.model, fx.survey, opts));

    const auto worst_before = *std::max_element(before.begin(), before.end());
    const auto best_after = *std::min_element(after.begin(), after.end());
    const bool ok = worst_before <= 20 && best_after > 100 && retrained.trained.model.class_names.size() == 5;
    if (ok) ++passed;
    detail += " [" + std::to_string(worst_before) + "->" + std::to_string(best_after) + "]";
  }
  return {passed == 5, "worst artifact rank before -> best after, per seed:" + detail};
}

Outcome lomb_scargle_recovery() {
  const auto lc = synthetic::sinusoid(0.7, 0.5, 500, 1000.0, 20.0, 42);
  const auto pg = lomb_scargle(lc);
  const double rel = std::abs(pg.best_period - 0.7) / 0.7;
  auto flat = synthetic::constant(500, 1000.0, 0.05, 43);
  flat.magnitudes.setConstant(17.0);
  const auto pg_flat = lomb_scargle(flat);
  // white noise around a constant level, reported for context only
  std::vector<double> noisy;
  for (std::uint64_t s = 43; s < 63; ++s) noisy.push_back(lomb_scargle(synthetic::constant(500, 1000.0, 0.05, s)).best_power);
  std::sort(noisy.begin(), noisy.end());
  const auto below = std::count_if(noisy.begin(), noisy.end(), [](double p) { return p < 0.05; });
  return {rel <= 1e-3 && pg_flat.best_power < 0.05,
          fmt("period %.6f d", pg.best_period) + fmt(" (rel err %.1e)", rel) +
              fmt(", constant-curve peak power %.2e", pg_flat.best_power) +
              fmt("; white noise sigma 0.05: median peak %.4f", noisy[noisy.size() / 2]) +
              fmt(", %.0f/20 below 0.05", static_cast<double>(below))};
}

Outcome throughput() {
  const auto means = synthetic::class_means(4, 5.0, 77);
  const auto table = synthetic::gaussian_table(
      {{"a", 400, means[0], 1.0}, {"b", 400, means[1], 1.0}, {"c", 400, means[2], 1.0}, {"d", 400, means[3], 1.0}},
      78);
  const auto model = train(table, seeded(1)).model;
  ScoreOptions opts;
  opts.workers = 1;

  auto timed = [&](std::size_t n) {
    synthetic::RecordStream stream(means, n, 99);
    const auto start = std::chrono::steady_clock::now();
    const auto r = score_batch(model, RecordSource(std::ref(stream)), opts);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::pair{s, r.scored};
  };
  timed(10'000);  // warm-up and memory baseline
  const long rss_small = max_rss_kb();
  const auto [t50, n50] = timed(50'000);
  const auto [t100, n100] = timed(100'000);
  const long rss_growth_kb = max_rss_kb() - rss_small;
  const double rate = static_cast<double>(n100) / t100;
  const double ratio = t100 / t50;
  const bool ok = n50 == 50'000 && n100 == 100'000 && rate >= 5000.0 && ratio >= 1.5 && ratio <= 2.5 &&
                  rss_growth_kb < 16 * 1024;
  return {ok, fmt("%.0f objects/s on one worker", rate) + fmt(", t(100k)/t(50k) = %.3f", ratio) +
                  ", max RSS growth " + std::to_string(rss_growth_kb) + " KiB"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("rfbn-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  synthetic::SurveySpec spec;
  spec.per_class = 30;
  spec.oddballs = 4;
  const auto paths = synthetic::write_survey(root / "survey", spec, 17);

  auto full_run = [&](const std::string& name, unsigned workers) {
    PipelineConfig cfg = seeded(7);
    cfg.workers = workers;
    const RunStore store(root / name);
    const auto training = extract_feature_table(read_manifest(paths.training_manifest), cfg.features, workers);
    const auto scoring =
        extract_feature_table(read_manifest(paths.scoring_manifest, false), cfg.features, workers);
    write_feature_table(root / (name + "-scoring.csv"), scoring);
    const auto outcome = train_run(store, training, cfg);
    score_run(store, outcome.info.run_id, root / (name + "-scoring.csv"), score_options(cfg));
    return std::pair{slurp(store.path(outcome.info.run_id) / "candidates.csv"), outcome.info.run_id};
  };
  const auto a = full_run("one", 1);
  const auto b = full_run("again", 1);
  const auto c = full_run("eight", 8);
  fs::remove_all(root);
  const bool ok = !a.first.empty() && a.first == b.first && a.first == c.first && a.second == c.second;
  return {ok, std::to_string(a.first.size()) + " bytes; repeat " + (a.first == b.first ? "identical" : "DIFFERS") +
                  ", 1 vs 8 workers " + (a.first == c.first ? "identical" : "DIFFERS")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s  %-34s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), s);
    std::fflush(stdout);
  };

  report("parameter count", parameter_count_exact);
  report("MAP estimate fidelity", map_fidelity);
  report("joint normalization", joint_normalization);
  report("K2 score oracle", k2_oracle);
  report("out-of-bag contract", oob_contract);
  report("forest sanity", forest_sanity);

  LocoSummary loco;
  const auto loco_start = std::chrono::steady_clock::now();
  std::string loco_error;
  try {
    loco = run_loco();
  } catch (const std::exception& e) {
    loco_error = e.what();
  }
  const double loco_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - loco_start).count();
  auto loco_line = [&](const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("%s  %-34s %s [%.1fs shared]\n", pass ? "PASS" : "FAIL", name.c_str(),
                loco_error.empty() ? detail.c_str() : ("exception: " + loco_error).c_str(), loco_s);
  };
  loco_line("leave-one-class-out recovery", loco_error.empty() && loco.positive_pass == 5,
            "held objects in top 175 per seed:" + loco.positive);
  loco_line("leave-one-class-out control", loco_error.empty() && loco.negative_pass == 5,
            "duplicate-class objects in top 175 per seed:" + loco.negative);
  loco_line("score separation", loco_error.empty() && loco.separation_pass == 5,
            "held median > worst trained p90 of -log joint per seed:" + loco.separation);

  report("alias filter", alias_fixture);
  report("retrain loop", retrain_loop);
  report("Lomb-Scargle", lomb_scargle_recovery);
  report("throughput", throughput);
  report("determinism", determinism);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
