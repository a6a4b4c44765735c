#include "rfbn/errors.hpp"
#include "rfbn/forest.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace rfbn;

namespace {

struct Blobs {
  Matrix x;
  Labels y;
};

Blobs blobs(int per_class, int classes, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Blobs b;
  b.x.resize(per_class * classes, 4);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const int r = c * per_class + i;
      for (int f = 0; f < 4; ++f) b.x(r, f) = noise(rng) + (f == c % 4 ? separation : 0.0);
      b.y.push_back(c);
    }
  }
  return b;
}

ForestConfig small_forest(int trees, std::uint64_t seed = 1) {
  ForestConfig c;
  c.n_trees = trees;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("default split size is floor(sqrt(features))") {
  ForestConfig c;
  CHECK(c.split_features_for(13) == 3);
  CHECK(c.split_features_for(4) == 2);
  c.n_split_features = 5;
  CHECK(c.split_features_for(13) == 5);
}

TEST_CASE("bootstrap draws n indices in range, sorted") {
  Rng rng(3);
  const auto bag = bootstrap_bag(1000, rng);
  CHECK(bag.size() == 1000);
  CHECK(std::is_sorted(bag.begin(), bag.end()));
  CHECK(bag.back() < 1000);
  std::vector<std::uint32_t> unique(bag);
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  // expected fraction of distinct draws is 1 - 1/e
  CHECK(static_cast<double>(unique.size()) / 1000.0 == doctest::Approx(0.632).epsilon(0.06));
}

TEST_CASE("a full-depth tree separates XOR") {
  Matrix x(4, 2);
  x << 0, 0, 0, 1, 1, 0, 1, 1;
  const Labels y{0, 1, 1, 0};
  const std::vector<std::uint32_t> bag{0, 1, 2, 3};
  ForestConfig c;
  c.n_split_features = 2;
  Rng rng(0);
  const auto t = grow_tree(x, y, 2, bag, c, rng);
  for (int i = 0; i < 4; ++i) {
    const RowVector row = x.row(i);
    CHECK(t.predict(row.data()) == y[static_cast<std::size_t>(i)]);
  }
  // a single split cannot separate XOR, so depth is 2
  CHECK(t.depth() == 2);
}

TEST_CASE("splits sit at midpoints between observed values") {
  Matrix x(4, 1);
  x << 1.0, 2.0, 5.0, 6.0;
  const Labels y{0, 0, 1, 1};
  ForestConfig c;
  c.n_split_features = 1;
  Rng rng(0);
  const auto t = grow_tree(x, y, 2, std::vector<std::uint32_t>{0, 1, 2, 3}, c, rng);
  REQUIRE_FALSE(t.is_leaf(0));
  CHECK(t.split_threshold[0] == 3.5);
  CHECK(t.split_feature[0] == 0);
}

TEST_CASE("votes are distributions and the forest is deterministic") {
  const auto b = blobs(60, 3, 3.0, 5);
  auto cfg = small_forest(40);
  const auto f1 = train_forest(b.x, b.y, {"a", "b", "c"}, cfg);
  cfg.workers = 4;
  const auto f2 = train_forest(b.x, b.y, {"a", "b", "c"}, cfg);
  CHECK(f1.oob_votes == f2.oob_votes);
  const Matrix v = predict_votes(f1, b.x);
  CHECK(v == predict_votes(f2, b.x));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    CHECK(v.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(v.row(i).minCoeff() >= 0.0);
    CHECK(f1.oob_votes.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("out-of-bag votes only use trees that did not see the object") {
  const auto b = blobs(40, 2, 2.0, 6);
  const auto forest = train_forest(b.x, b.y, {"a", "b"}, small_forest(30));
  std::size_t in_bag = 0, total = 0;
  const auto oob = oob_vote_matrix(forest, b.x, [&](std::size_t i, std::size_t t) {
    ++total;
    if (forest.trees[t].in_bag(static_cast<std::uint32_t>(i))) ++in_bag;
  });
  CHECK(total > 0);
  CHECK(in_bag == 0);
  CHECK(oob.votes == forest.oob_votes);
}

TEST_CASE("objects no tree left out get full-forest votes and a warning") {
  const auto b = blobs(20, 2, 3.0, 7);
  const auto forest = train_forest(b.x, b.y, {"a", "b"}, small_forest(1));
  const auto oob = oob_vote_matrix(forest, b.x);
  REQUIRE_FALSE(oob.zero_coverage.empty());
  CHECK_FALSE(oob.warnings.empty());
  const auto i = oob.zero_coverage.front();
  CHECK(oob.coverage[i] == 0);
  const RowVector row = b.x.row(static_cast<Eigen::Index>(i));
  CHECK(Vector(oob.votes.row(static_cast<Eigen::Index>(i)).transpose()) == predict_votes(forest, row.data()));
}

TEST_CASE("separable classes give high out-of-bag macro F") {
  const auto b = blobs(100, 3, 5.0, 8);
  const auto forest = train_forest(b.x, b.y, {"a", "b", "c"}, small_forest(100));
  CHECK(macro_f_score(forest.oob_votes, b.y).macro >= 0.95);
}

TEST_CASE("macro F of a constant predictor on balanced classes is 1/3") {
  Matrix votes(4, 2);
  votes << 1, 0, 1, 0, 1, 0, 1, 0;
  const auto f = macro_f_score(votes, Labels{0, 0, 1, 1});
  CHECK(f.macro == doctest::Approx(1.0 / 3.0));
  CHECK(f.confusion(1, 0) == 2);
  Matrix perfect(2, 2);
  perfect << 1, 0, 0, 1;
  CHECK(macro_f_score(perfect, Labels{0, 1}).macro == 1.0);
}

TEST_CASE("vote argmax breaks ties toward the lower class") {
  RowVector v(3);
  v << 0.4, 0.4, 0.2;
  CHECK(vote_argmax(v) == 0);
  v << 0.2, 0.4, 0.4;
  CHECK(vote_argmax(v) == 1);
}

TEST_CASE("forest save and load round-trip") {
  const auto b = blobs(30, 3, 2.0, 9);
  const auto forest = train_forest(b.x, b.y, {"a", "b", "c"}, small_forest(10));
  std::stringstream buf;
  save_forest(buf, forest);
  const auto back = load_forest(buf);
  CHECK(back.class_names == forest.class_names);
  CHECK(back.trees.size() == forest.trees.size());
  CHECK(back.oob_votes == forest.oob_votes);
  CHECK(predict_votes(back, b.x) == predict_votes(forest, b.x));
  CHECK(split_counts(back) == split_counts(forest));

  std::stringstream junk("not a forest");
  CHECK_THROWS_AS(load_forest(junk), MalformedInput);
}
