#pragma once

#include "rfbn/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rfbn {

using Rng = std::mt19937_64;

struct ForestConfig {
  int n_trees = 500;
  int n_split_features = 0;  // 0 selects floor(sqrt(num_features))
  int min_node_size = 1;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  int split_features_for(int num_features) const;
};

// Binary tree in flattened arrays. Node 0 is the root; leaves have
// split_feature == -1 and index their class counts through count_offset.
class Tree {
 public:
  std::vector<int> split_feature;
  std::vector<double> split_threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<int> leaf_class;       // majority class of the leaf, -1 for internal nodes
  std::vector<int> count_offset;     // into leaf_counts, -1 for internal nodes
  std::vector<std::uint32_t> leaf_counts;
  std::vector<std::uint32_t> bag;    // bootstrap draws, sorted ascending
  int num_classes = 0;

  std::size_t num_nodes() const noexcept { return split_feature.size(); }
  bool is_leaf(int node) const { return split_feature[static_cast<std::size_t>(node)] < 0; }
  int leaf_for(const double* x) const;
  int predict(const double* x) const { return leaf_class[static_cast<std::size_t>(leaf_for(x))]; }
  int depth() const;
  bool in_bag(std::uint32_t index) const;
  std::span<const std::uint32_t> counts(int leaf) const;
};

struct Forest {
  ForestConfig config;
  std::vector<std::string> class_names;
  int num_features = 0;
  std::vector<Tree> trees;
  Matrix oob_votes;            // n x k, training set
  std::vector<int> oob_coverage;

  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }
  std::size_t num_training() const noexcept { return oob_coverage.size(); }
};

// n draws with replacement from [0, n), sorted.
std::vector<std::uint32_t> bootstrap_bag(std::size_t n, Rng& rng);

// Grows one tree to full depth on the given bag: at each node |F'| features
// are sampled without replacement and the Gini-optimal midpoint split among
// them is taken (ties: lowest feature, then lowest threshold).
Tree grow_tree(const Matrix& x, const Labels& y, int num_classes, std::span<const std::uint32_t> bag,
               const ForestConfig& config, Rng& rng);

// Trains all trees (in parallel when config.workers > 1; results do not
// depend on the worker count) and fills the out-of-bag votes.
Forest train_forest(const Matrix& x, const Labels& y, std::vector<std::string> class_names,
                    const ForestConfig& config);

// Fraction of trees whose leaf majority is each class.
Vector predict_votes(const Forest& forest, const double* x);
Vector predict_votes(const Forest& forest, const Eigen::Ref<const RowVector>& x);
Matrix predict_votes(const Forest& forest, const Matrix& x);

struct OobVotes {
  Matrix votes;                         // n x k
  std::vector<int> coverage;            // trees with i out of bag
  std::vector<std::size_t> zero_coverage;  // imputed with full-forest votes
  std::vector<std::string> warnings;
};

// Observer invoked for each (object, tree) pair that contributes a vote.
using OobObserver = std::function<void(std::size_t object, std::size_t tree)>;

OobVotes oob_vote_matrix(const Forest& forest, const Matrix& x, const OobObserver& observer = {});

// Argmax with ties to the lowest index.
int vote_argmax(const Eigen::Ref<const RowVector>& votes);

struct FScore {
  double macro = 0.0;
  Vector per_class;           // NaN for skipped classes
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted class
  std::vector<std::string> warnings;
};

// Unweighted mean of per-class F1 over classes present in y.
FScore macro_f_score(const Matrix& votes, const Labels& y);

// Number of internal nodes splitting on each feature across the forest.
std::vector<std::size_t> split_counts(const Forest& forest);

// Versioned binary bundle (little-endian); see README for the layout.
void save_forest(std::ostream& out, const Forest& forest);
void save_forest(const std::filesystem::path& path, const Forest& forest);
Forest load_forest(std::istream& in);
Forest load_forest(const std::filesystem::path& path);

}  // namespace rfbn
