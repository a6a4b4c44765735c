#include "rfbn/candidates.hpp"
#include "rfbn/clustering.hpp"
#include "rfbn/crossmatch.hpp"
#include "rfbn/errors.hpp"
#include "rfbn/filters.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

using namespace rfbn;

namespace {

CandidateRecord candidate(const std::string& id, double log_joint, double period = 1.7) {
  CandidateRecord c;
  c.object_id = id;
  c.log_joint = log_joint;
  c.score = -std::expm1(log_joint);
  c.period = period;
  c.votes = Vector::Constant(2, 0.5);
  c.features.set(Feature::period, period);
  c.features.set(Feature::color, 0.3);
  c.mean_mag = 17.0;
  return c;
}

std::set<std::string> ids(const std::vector<CandidateRecord>& v) {
  std::set<std::string> s;
  for (const auto& c : v) s.insert(c.object_id);
  return s;
}

}  // namespace

TEST_CASE("ranking is ascending log joint, ties by object id") {
  std::vector<CandidateRecord> v{candidate("b", -3.0), candidate("a", -3.0), candidate("c", -9.0), candidate("d", -0.1)};
  assign_ranks(v);
  CHECK(v[0].object_id == "c");
  CHECK(v[1].object_id == "a");
  CHECK(v[2].object_id == "b");
  CHECK(v[3].object_id == "d");
  CHECK(v[0].rank == 1);
  CHECK(v[3].rank == 4);
}

TEST_CASE("candidate CSV round-trip keeps every field") {
  CandidateList list;
  list.class_names = {"rr", "cep"};
  auto c = candidate("obj1", -4.25, std::numeric_limits<double>::quiet_NaN());
  c.rank = 1;
  c.votes << 0.125, 0.875;
  c.triage_label = "artifact:bleed";
  c.run_id = "abc";
  c.ra_deg = 81.5;
  c.dec_deg = -69.25;
  c.snr = 2.0;
  c.low_snr = true;
  c.band = Band::red;
  c.path = "/data/obj1_R.dat";
  list.candidates.push_back(c);
  std::stringstream buf;
  write_candidates(buf, list);
  const auto back = read_candidates(buf);
  REQUIRE(back.candidates.size() == 1);
  CHECK(back.class_names == list.class_names);
  const auto& b = back.candidates[0];
  CHECK(b.object_id == "obj1");
  CHECK(b.log_joint == c.log_joint);
  CHECK(b.score == c.score);
  CHECK(std::isnan(b.period));
  CHECK(b.votes == c.votes);
  CHECK(b.triage_label == "artifact:bleed");
  CHECK(b.low_snr);
  CHECK(b.band == Band::red);
  CHECK(b.features.mask == c.features.mask);
  CHECK(b.path == c.path);
}

TEST_CASE("candidate CSV with a bad header is rejected") {
  std::istringstream in("id,score\nx,1\n");
  CHECK_THROWS_AS(read_candidates(in), MalformedInput);
}

TEST_CASE("alias filter removes daily, harmonic and seasonal periods") {
  const std::vector<double> periods{0.9973, 1.0, 0.5, 365.0, 370.0, 0.7, 3.2, 12.0, 0.33, 0.25};
  std::vector<CandidateRecord> v;
  for (std::size_t i = 0; i < periods.size(); ++i) v.push_back(candidate("p" + std::to_string(i), -1.0, periods[i]));
  AliasTolerance tol;
  tol.relative = 0.02;
  const auto r = alias_filter(v, tol);
  CHECK(ids(r.removed) == std::set<std::string>{"p0", "p1", "p2", "p3", "p4", "p8"});
  CHECK(r.kept.size() == 4);
  std::size_t tallied = 0;
  for (const auto& [reason, n] : r.tally) tallied += n;
  CHECK(tallied == 6);
}

TEST_CASE("alias tolerance is relative") {
  AliasTolerance tol;
  CHECK(alias_match(370.0, tol).empty());
  CHECK_FALSE(alias_match(366.0, tol).empty());
  CHECK_FALSE(alias_match(2.0, tol).empty());
  CHECK(alias_match(0.7, tol).empty());
  CHECK(alias_match(std::numeric_limits<double>::quiet_NaN(), tol).empty());
}

TEST_CASE("candidates without a valid period survive the alias filter") {
  const auto r = alias_filter({candidate("n", -1.0, std::numeric_limits<double>::quiet_NaN())});
  CHECK(r.kept.size() == 1);
}

TEST_CASE("cross-band filter keeps ids in the red top list") {
  const std::vector<CandidateRecord> blue{candidate("a", -5), candidate("b", -4), candidate("c", -3)};
  const std::vector<CandidateRecord> red{candidate("c", -6), candidate("x", -5), candidate("a", -1)};
  CHECK(ids(cross_band_filter(blue, red, 2).kept) == std::set<std::string>{"c"});
  CHECK(ids(cross_band_filter(blue, red, kUnlimitedDepth).kept) == std::set<std::string>{"a", "c"});
  CHECK(cross_band_filter(blue, {}, 10).kept.empty());
}

TEST_CASE("proportional depth") {
  CHECK(proportional_depth(2'000'000) == 2000);
  CHECK(proportional_depth(10) >= 1);
}

TEST_CASE("angular separation") {
  CHECK(angular_separation_deg(10.0, 0.0, 11.0, 0.0) == doctest::Approx(1.0));
  CHECK(angular_separation_deg(0.0, 89.0, 180.0, 89.0) == doctest::Approx(2.0));
  CHECK(angular_separation_deg(359.9, 0.0, 0.1, 0.0) == doctest::Approx(0.2));
  CHECK(angular_separation_deg(5.0, 5.0, 5.0, 5.0) == 0.0);
}

TEST_CASE("cross-match picks the nearest entry within the radius") {
  std::istringstream in(
      "id,ra_deg,dec_deg,label\n"
      "far,10.01,0,EB\n"
      "near,10.0003,0,RR\n"
      "twin,10,0.0003,CEP\n"
      "bad,x,0,LPV\n");
  const auto cat = read_catalog(in, "local");
  CHECK(cat.entries.size() == 3);
  CHECK(cat.skipped_rows == 1);
  auto c = candidate("o", -1.0);
  c.ra_deg = 10.0;
  c.dec_deg = 0.0;
  auto lonely = candidate("l", -1.0);
  lonely.ra_deg = 50.0;
  const auto r = crossmatch({c, lonely}, cat, 2.0);
  REQUIRE(r.matches.size() == 2);
  CHECK(r.matches[0].matched);
  // near and twin are equidistant; the lower row wins
  CHECK(r.matches[0].counterpart_id == "near");
  CHECK(r.matches[0].separation_arcsec == doctest::Approx(1.08).epsilon(1e-3));
  CHECK_FALSE(r.matches[1].matched);
  CHECK(r.matches[1].counterpart_label == "no counterpart");
  CHECK(r.matched == 1);
  CHECK_THROWS_AS(crossmatch({c}, cat, 0.0), InvalidArgument);
}

TEST_CASE("k-means recovers well separated blobs") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.5);
  Matrix x(150, 2);
  std::vector<int> truth;
  const double centers[3][2] = {{0, 0}, {6, 0}, {0, 6}};
  for (int i = 0; i < 150; ++i) {
    const int c = i % 3;
    x(i, 0) = centers[c][0] + noise(rng);
    x(i, 1) = centers[c][1] + noise(rng);
    truth.push_back(c);
  }
  const auto r = kmeans(x, 3, 7);
  CHECK(adjusted_rand_index(r.labels, truth) >= 0.9);
  CHECK(silhouette(x, r.labels) > 0.7);
  CHECK(kmeans(x, 3, 7).labels == r.labels);
}

TEST_CASE("k-means edge cases") {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  const auto one = kmeans(x, 1, 0);
  CHECK(one.labels == std::vector<int>{0, 0, 0, 0});
  CHECK(one.centroids(0, 0) == doctest::Approx(2.5));
  CHECK_THROWS_AS(kmeans(x, 5, 0), InvalidArgument);
  CHECK_THROWS_AS(kmeans(x, 0, 0), InvalidArgument);
}

TEST_CASE("adjusted Rand index") {
  CHECK(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) < 0.0);
}

TEST_CASE("standardize zeroes constant columns") {
  Matrix x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const Matrix z = standardize(x);
  CHECK(z.col(1).isZero());
  CHECK(z.col(0).mean() == doctest::Approx(0.0));
}

TEST_CASE("candidate clustering and color-magnitude export") {
  std::vector<CandidateRecord> v;
  for (int i = 0; i < 20; ++i) {
    auto c = candidate("c" + std::to_string(i), -1.0 - i, i < 10 ? 0.5 : 40.0);
    c.features.set(Feature::amplitude, i < 10 ? 0.1 : 2.0);
    c.rank = static_cast<std::size_t>(i + 1);
    v.push_back(c);
  }
  const auto r = cluster_candidates(v, 2, 3);
  CHECK(r.k == 2);
  CHECK(r.assignments[0] == r.assignments[9]);
  CHECK(r.assignments[0] != r.assignments[10]);
  const auto automatic = cluster_candidates(v, std::nullopt, 3);
  CHECK(automatic.k >= 2);
  std::ostringstream out;
  write_cmd_export(out, v, r);
  std::istringstream lines(out.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "id,rank,score,color,mean_mag,cluster");
  int rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == 20);
}
