#include "rfbn/errors.hpp"
#include "rfbn/lightcurve.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

using namespace rfbn;

TEST_CASE("three identical rows parse to a flat curve") {
  const auto lc = parse_lightcurve("0 10 0.1\n1 10 0.1\n2 10 0.1\n", Band::blue);
  REQUIRE(lc.size() == 3);
  CHECK(lc.magnitudes.isConstant(10.0));
  CHECK(lc.dropped_rows == 0);
}

TEST_CASE("rows out of time order come back sorted") {
  const auto lc = parse_lightcurve("2 12 0.1\n0 10 0.1\n1 11 0.1\n", Band::blue);
  CHECK(lc.times[0] == 0.0);
  CHECK(lc.times[2] == 2.0);
  CHECK(lc.magnitudes[0] == 10.0);
  CHECK(lc.magnitudes[2] == 12.0);
}

TEST_CASE("a non-numeric magnitude is dropped and counted") {
  const auto lc = parse_lightcurve("0 10 0.1\n1 11 0.1\n2 abc 0.1\n3 12 0.1\n4 13 0.1\n5 14 0.1\n", Band::red);
  CHECK(lc.size() == 5);
  CHECK(lc.dropped_rows == 1);
  CHECK(lc.band == Band::red);
}

TEST_CASE("comments and comma separators are accepted") {
  const auto lc = parse_lightcurve("# t m e\n0,10,0.1\n1,11,0.2\n", Band::blue);
  CHECK(lc.size() == 2);
  CHECK(lc.errors[1] == doctest::Approx(0.2));
}

TEST_CASE("malformed curves are rejected") {
  CHECK_THROWS_AS(parse_lightcurve("0 10 0.1\n", Band::blue), MalformedInput);
  CHECK_THROWS_AS(parse_lightcurve("0 10 0.1\n1 10 0\n2 10 0.1\n", Band::blue), MalformedInput);
  CHECK_THROWS_AS(parse_lightcurve("0 10 0.1\n1 10 -0.2\n", Band::blue), MalformedInput);
}

TEST_CASE("duplicate epochs are averaged or rejected") {
  const std::string text = "0 10 0.1\n1 11 0.1\n1 13 0.1\n2 12 0.1\n";
  const auto lc = parse_lightcurve(text, Band::blue);
  CHECK(lc.size() == 3);
  CHECK(lc.merged_epochs == 1);
  CHECK(lc.magnitudes[1] == doctest::Approx(12.0));
  ParseOptions strict;
  strict.duplicates = DuplicateEpochs::reject;
  CHECK_THROWS_AS(parse_lightcurve(text, Band::blue, strict), MalformedInput);
}

TEST_CASE("write and parse round-trip bit for bit") {
  const auto lc = parse_lightcurve("0.1 10.123456789012 0.013\n1.7 11.5 0.02\n3.3 9.25 0.011\n", Band::blue);
  std::ostringstream out;
  write_lightcurve(out, lc);
  const auto back = parse_lightcurve(out.str(), Band::blue);
  CHECK(back.times == lc.times);
  CHECK(back.magnitudes == lc.magnitudes);
  CHECK(back.errors == lc.errors);
}

TEST_CASE("folding maps phases into [0, 1) in ascending order") {
  const auto lc = parse_lightcurve("0 1 0.1\n0.5 2 0.1\n1.25 3 0.1\n2.75 4 0.1\n", Band::blue);
  const auto f = fold(lc, 1.0);
  REQUIRE(f.phases.size() == 4);
  CHECK(f.phases[0] == doctest::Approx(0.0));
  CHECK(f.phases[1] == doctest::Approx(0.25));
  CHECK(f.phases[2] == doctest::Approx(0.5));
  CHECK(f.phases[3] == doctest::Approx(0.75));
  CHECK(f.magnitudes[1] == 3.0);
  CHECK(f.magnitudes[3] == 4.0);
  CHECK(f.t0 == 0.0);
}

TEST_CASE("folding at twice the period halves the phases of the first cycle") {
  const auto lc = parse_lightcurve("0 1 0.1\n0.2 2 0.1\n0.4 3 0.1\n0.6 4 0.1\n", Band::blue);
  const auto f1 = fold(lc, 1.0);
  const auto f2 = fold(lc, 2.0);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(f2.phases[i] == doctest::Approx(f1.phases[i] / 2.0));
  CHECK_THROWS_AS(fold(lc, 0.0), InvalidArgument);
}

TEST_CASE("manifest resolves relative paths and counts classes") {
  const auto dir = std::filesystem::temp_directory_path() / "rfbn_manifest_test";
  std::filesystem::create_directories(dir / "curves");
  for (const char* f : {"a.dat", "b.dat", "c.dat"}) std::ofstream(dir / "curves" / f) << "0 1 0.1\n1 1 0.1\n";
  std::istringstream in(
      "id,path,label,ra_deg,dec_deg\n"
      "a,curves/a.dat,rr,10,-5\n"
      "b,curves/b.dat,cep,11,-6\n"
      "c,curves/c.dat,rr,12,-7\n");
  const auto m = parse_manifest(in, dir);
  REQUIRE(m.size() == 3);
  CHECK(m.classes == std::vector<std::string>{"rr", "cep"});
  CHECK(m.class_counts().at("rr") == 2);
  CHECK(m.class_index("cep") == 1);
  CHECK(m.entries[0].path.is_absolute());
  CHECK(m.entries[0].path == (dir / "curves" / "a.dat").lexically_normal());
  CHECK(m.entries[1].dec_deg == -6.0);
}

TEST_CASE("manifest errors") {
  std::istringstream bad_header("id,file,label\n");
  CHECK_THROWS_AS(parse_manifest(bad_header, "."), MalformedInput);
  std::istringstream one_class("id,path,label,ra_deg,dec_deg\na,x.dat,rr,0,0\n");
  CHECK_THROWS(parse_manifest(one_class, "."));
}

TEST_CASE("manifest with eight classes at survey training-set sizes") {
  const std::vector<std::size_t> counts{3969, 58, 127, 78, 288, 193, 574, 359};
  std::ostringstream csv;
  csv << "id,path,label,ra_deg,dec_deg\n";
  std::size_t id = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) csv << "o" << id++ << ",c/o.dat,class" << c << ",80,-69\n";
  }
  const auto dir = std::filesystem::temp_directory_path() / "rfbn_manifest_8";
  std::filesystem::create_directories(dir / "c");
  std::ofstream(dir / "c" / "o.dat") << "0 1 0.1\n1 1 0.1\n";
  std::istringstream in(csv.str());
  const auto m = parse_manifest(in, dir);
  CHECK(m.size() == 5646);
  CHECK(m.num_classes() == 8);
  CHECK(m.class_counts().at("class1") == 58);
}
