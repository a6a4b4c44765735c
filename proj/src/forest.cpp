#include "rfbn/forest.hpp"

#include "rfbn/errors.hpp"
#include "rfbn/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace rfbn {

int ForestConfig::split_features_for(int num_features) const {
  if (n_split_features > 0) return n_split_features;
  return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(num_features)))));
}

int Tree::leaf_for(const double* x) const {
  int node = 0;
  while (split_feature[static_cast<std::size_t>(node)] >= 0) {
    const auto n = static_cast<std::size_t>(node);
    node = x[split_feature[n]] <= split_threshold[n] ? left[n] : right[n];
  }
  return node;
}

int Tree::depth() const {
  if (split_feature.empty()) return 0;
  std::vector<int> d(split_feature.size(), 0);
  int deepest = 0;
  for (std::size_t n = 0; n < split_feature.size(); ++n) {
    deepest = std::max(deepest, d[n]);
    if (split_feature[n] >= 0) {
      d[static_cast<std::size_t>(left[n])] = d[n] + 1;
      d[static_cast<std::size_t>(right[n])] = d[n] + 1;
    }
  }
  return deepest;
}

bool Tree::in_bag(std::uint32_t index) const { return std::binary_search(bag.begin(), bag.end(), index); }

std::span<const std::uint32_t> Tree::counts(int leaf) const {
  const auto off = count_offset[static_cast<std::size_t>(leaf)];
  if (off < 0) return {};
  return {leaf_counts.data() + off, static_cast<std::size_t>(num_classes)};
}

std::vector<std::uint32_t> bootstrap_bag(std::size_t n, Rng& rng) {
  if (n == 0) throw InvalidArgument("bootstrap bag needs n >= 1");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  std::vector<std::uint32_t> bag(n);
  for (auto& b : bag) b = pick(rng);
  std::sort(bag.begin(), bag.end());
  return bag;
}

namespace {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double score = -std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Labels& y, int k, const ForestConfig& cfg, Rng& rng)
      : x_(x), y_(y), k_(k), cfg_(cfg), rng_(rng), mtry_(cfg.split_features_for(static_cast<int>(x.cols()))) {}

  Tree build(std::span<const std::uint32_t> bag) {
    tree_.num_classes = k_;
    tree_.bag.assign(bag.begin(), bag.end());
    std::sort(tree_.bag.begin(), tree_.bag.end());
    idx_.assign(bag.begin(), bag.end());
    features_.resize(static_cast<std::size_t>(x_.cols()));
    std::iota(features_.begin(), features_.end(), 0);

    struct Pending {
      int node;
      std::size_t begin, end;
    };
    std::vector<Pending> stack;
    stack.push_back({new_node(), 0, idx_.size()});
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      std::vector<std::uint32_t> counts(static_cast<std::size_t>(k_), 0);
      for (std::size_t i = p.begin; i < p.end; ++i) ++counts[static_cast<std::size_t>(y_[idx_[i]])];
      const std::size_t size = p.end - p.begin;
      const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
      SplitChoice split;
      if (!pure && size > static_cast<std::size_t>(cfg_.min_node_size)) split = best_split(p.begin, p.end, counts);
      if (split.feature < 0) {
        make_leaf(p.node, counts);
        continue;
      }
      const auto f = split.feature;
      const auto mid = std::partition(idx_.begin() + static_cast<std::ptrdiff_t>(p.begin),
                                      idx_.begin() + static_cast<std::ptrdiff_t>(p.end),
                                      [&](std::uint32_t i) { return x_(i, f) <= split.threshold; });
      const auto m = static_cast<std::size_t>(mid - idx_.begin());
      const int l = new_node();
      const int r = new_node();
      const auto n = static_cast<std::size_t>(p.node);
      tree_.split_feature[n] = f;
      tree_.split_threshold[n] = split.threshold;
      tree_.left[n] = l;
      tree_.right[n] = r;
      stack.push_back({r, m, p.end});
      stack.push_back({l, p.begin, m});
    }
    return std::move(tree_);
  }

 private:
  int new_node() {
    tree_.split_feature.push_back(-1);
    tree_.split_threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.leaf_class.push_back(-1);
    tree_.count_offset.push_back(-1);
    return static_cast<int>(tree_.split_feature.size() - 1);
  }

  void make_leaf(int node, const std::vector<std::uint32_t>& counts) {
    const auto n = static_cast<std::size_t>(node);
    tree_.leaf_class[n] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    tree_.count_offset[n] = static_cast<int>(tree_.leaf_counts.size());
    tree_.leaf_counts.insert(tree_.leaf_counts.end(), counts.begin(), counts.end());
  }

  // Maximizes sum_c L_c^2/n_L + sum_c R_c^2/n_R, which is equivalent to the
  // weighted Gini decrease. Zero-decrease splits are allowed so that
  // interaction-only structure (XOR) can still be separated.
  SplitChoice best_split(std::size_t begin, std::size_t end, const std::vector<std::uint32_t>& node_counts) {
    // Partial Fisher-Yates for |F'| features, then ascending for tie-breaking.
    const auto nf = features_.size();
    for (std::size_t i = 0; i < static_cast<std::size_t>(mtry_) && i < nf; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, nf - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::vector<int> sampled(features_.begin(), features_.begin() + std::min<std::ptrdiff_t>(mtry_, static_cast<std::ptrdiff_t>(nf)));
    std::sort(sampled.begin(), sampled.end());

    const std::size_t size = end - begin;
    const double eps = 1e-9 * static_cast<double>(size);
    SplitChoice best;
    std::vector<std::uint32_t> left(static_cast<std::size_t>(k_));
    std::vector<std::uint32_t> right(static_cast<std::size_t>(k_));
    for (const int f : sampled) {
      sorted_.clear();
      for (std::size_t i = begin; i < end; ++i) sorted_.emplace_back(x_(idx_[i], f), y_[idx_[i]]);
      std::sort(sorted_.begin(), sorted_.end());
      if (sorted_.front().first == sorted_.back().first) continue;
      std::fill(left.begin(), left.end(), 0);
      right = node_counts;
      double sum_left = 0.0;
      double sum_right = 0.0;
      for (auto c : right) sum_right += static_cast<double>(c) * c;
      for (std::size_t i = 0; i + 1 < size; ++i) {
        const auto c = static_cast<std::size_t>(sorted_[i].second);
        sum_left += 2.0 * left[c] + 1.0;
        sum_right -= 2.0 * right[c] - 1.0;
        ++left[c];
        --right[c];
        const double lo = sorted_[i].first, hi = sorted_[i + 1].first;
        if (!(lo < hi)) continue;
        const double n_left = static_cast<double>(i + 1);
        const double score = sum_left / n_left + sum_right / (static_cast<double>(size) - n_left);
        if (score > best.score + eps) {
          double threshold = lo + 0.5 * (hi - lo);
          if (!(threshold < hi)) threshold = lo;
          best = {f, threshold, score};
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const Labels& y_;
  int k_;
  const ForestConfig& cfg_;
  Rng& rng_;
  int mtry_;
  Tree tree_;
  std::vector<std::uint32_t> idx_;
  std::vector<int> features_;
  std::vector<std::pair<double, int>> sorted_;
};

Rng tree_rng(std::uint64_t seed, std::size_t tree) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tree), static_cast<std::uint32_t>(tree >> 32), 0x5eedu};
  return Rng(seq);
}

void check_training_inputs(const Matrix& x, const Labels& y, int k) {
  if (x.rows() == 0) throw InvalidArgument("training matrix is empty");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw InvalidArgument("label count does not match rows");
  if (k < 1) throw InvalidArgument("need at least one class");
  for (int label : y) {
    if (label < 0 || label >= k) throw InvalidArgument("label " + std::to_string(label) + " out of range");
  }
}

}  // namespace

Tree grow_tree(const Matrix& x, const Labels& y, int num_classes, std::span<const std::uint32_t> bag,
               const ForestConfig& config, Rng& rng) {
  check_training_inputs(x, y, num_classes);
  if (bag.empty()) throw InvalidArgument("bag is empty");
  if (config.min_node_size < 1) throw InvalidArgument("min_node_size must be >= 1");
  if (config.n_split_features > x.cols()) throw InvalidArgument("|F'| exceeds the number of features");
  return TreeBuilder(x, y, num_classes, config, rng).build(bag);
}

Forest train_forest(const Matrix& x, const Labels& y, std::vector<std::string> class_names,
                    const ForestConfig& config) {
  const int k = static_cast<int>(class_names.size());
  check_training_inputs(x, y, k);
  if (config.n_trees < 1) throw InvalidArgument("n_trees must be positive");
  if (config.min_node_size < 1) throw InvalidArgument("min_node_size must be >= 1");
  if (config.n_split_features > x.cols()) throw InvalidArgument("|F'| exceeds the number of features");

  Forest forest;
  forest.config = config;
  forest.class_names = std::move(class_names);
  forest.num_features = static_cast<int>(x.cols());
  forest.trees.resize(static_cast<std::size_t>(config.n_trees));
  const auto n = static_cast<std::size_t>(x.rows());
  parallel_for(forest.trees.size(), resolve_workers(config.workers), [&](std::size_t t) {
    Rng rng = tree_rng(config.seed, t);
    const auto bag = bootstrap_bag(n, rng);
    forest.trees[t] = TreeBuilder(x, y, k, config, rng).build(bag);
  });

  auto oob = oob_vote_matrix(forest, x);
  forest.oob_votes = std::move(oob.votes);
  forest.oob_coverage = std::move(oob.coverage);
  return forest;
}

Vector predict_votes(const Forest& forest, const double* x) {
  Vector votes = Vector::Zero(forest.num_classes());
  for (const auto& tree : forest.trees) votes[tree.predict(x)] += 1.0;
  votes /= static_cast<double>(forest.trees.size());
  return votes;
}

Vector predict_votes(const Forest& forest, const Eigen::Ref<const RowVector>& x) {
  if (x.size() != forest.num_features) {
    throw InvalidArgument("feature vector has " + std::to_string(x.size()) + " entries, forest expects " +
                          std::to_string(forest.num_features));
  }
  const RowVector row = x;
  return predict_votes(forest, row.data());
}

Matrix predict_votes(const Forest& forest, const Matrix& x) {
  if (x.cols() != forest.num_features) {
    throw InvalidArgument("feature matrix has " + std::to_string(x.cols()) + " columns, forest expects " +
                          std::to_string(forest.num_features));
  }
  Matrix votes(x.rows(), forest.num_classes());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const RowVector row = x.row(i);
    votes.row(i) = predict_votes(forest, row.data()).transpose();
  }
  return votes;
}

OobVotes oob_vote_matrix(const Forest& forest, const Matrix& x, const OobObserver& observer) {
  const auto n = static_cast<std::size_t>(x.rows());
  const int k = forest.num_classes();
  if (x.cols() != forest.num_features) throw InvalidArgument("feature matrix width does not match forest");
  OobVotes out;
  out.votes = Matrix::Zero(static_cast<Eigen::Index>(n), k);
  out.coverage.assign(n, 0);
  // Row-major copy so each object's features are contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = x;
  std::vector<char> in_bag(n);
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    const auto& tree = forest.trees[t];
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (auto b : tree.bag) {
      if (b < n) in_bag[b] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      out.votes(static_cast<Eigen::Index>(i), tree.predict(rows.row(static_cast<Eigen::Index>(i)).data())) += 1.0;
      ++out.coverage[i];
      if (observer) observer(i, t);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (out.coverage[i] > 0) {
      out.votes.row(row) /= static_cast<double>(out.coverage[i]);
    } else {
      out.zero_coverage.push_back(i);
      out.votes.row(row) = predict_votes(forest, rows.row(row).data()).transpose();
    }
  }
  if (!out.zero_coverage.empty()) {
    out.warnings.push_back(std::to_string(out.zero_coverage.size()) +
                           " object(s) were in every bag; using full-forest votes for them");
  }
  return out;
}

int vote_argmax(const Eigen::Ref<const RowVector>& votes) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < votes.size(); ++j) {
    if (votes[j] > votes[best]) best = j;
  }
  return static_cast<int>(best);
}

FScore macro_f_score(const Matrix& votes, const Labels& y) {
  if (static_cast<std::size_t>(votes.rows()) != y.size()) throw InvalidArgument("votes and labels differ in length");
  const auto k = votes.cols();
  FScore out;
  out.confusion = Eigen::MatrixXi::Zero(k, k);
  for (Eigen::Index i = 0; i < votes.rows(); ++i) {
    ++out.confusion(y[static_cast<std::size_t>(i)], vote_argmax(votes.row(i)));
  }
  out.per_class = Vector::Constant(k, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const double tp = out.confusion(c, c);
    const double actual = out.confusion.row(c).sum();
    const double predicted = out.confusion.col(c).sum();
    if (actual == 0) {
      out.warnings.push_back("class " + std::to_string(c) + " absent from labels; skipped");
      continue;
    }
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = tp / actual;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    out.per_class[c] = f1;
    sum += f1;
    ++present;
  }
  out.macro = present > 0 ? sum / present : 0.0;
  return out;
}

std::vector<std::size_t> split_counts(const Forest& forest) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(forest.num_features), 0);
  for (const auto& tree : forest.trees) {
    for (int f : tree.split_feature) {
      if (f >= 0) ++counts[static_cast<std::size_t>(f)];
    }
  }
  return counts;
}

namespace {

static_assert(std::endian::native == std::endian::little, "forest bundle I/O assumes little-endian");

constexpr char kMagic[8] = {'R', 'F', 'B', 'N', 'F', 'O', 'R', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_vector(std::ostream& out, const std::vector<T>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw MalformedInput("truncated forest bundle");
  return v;
}

template <typename T>
std::vector<T> get_vector(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 34)) throw MalformedInput("corrupt forest bundle (array length)");
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw MalformedInput("truncated forest bundle");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 20)) throw MalformedInput("corrupt forest bundle (string length)");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw MalformedInput("truncated forest bundle");
  return s;
}

}  // namespace

void save_forest(std::ostream& out, const Forest& forest) {
  out.write(kMagic, sizeof(kMagic));
  put(out, kFormatVersion);
  put<std::int32_t>(out, forest.config.n_trees);
  put<std::int32_t>(out, forest.config.n_split_features);
  put<std::int32_t>(out, forest.config.min_node_size);
  put<std::uint64_t>(out, forest.config.seed);
  put<std::int32_t>(out, forest.num_features);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(forest.class_names.size()));
  for (const auto& c : forest.class_names) put_string(out, c);
  put<std::uint64_t>(out, forest.trees.size());
  for (const auto& t : forest.trees) {
    put_vector(out, t.split_feature);
    put_vector(out, t.split_threshold);
    put_vector(out, t.left);
    put_vector(out, t.right);
    put_vector(out, t.leaf_class);
    put_vector(out, t.count_offset);
    put_vector(out, t.leaf_counts);
    put_vector(out, t.bag);
  }
  put<std::uint64_t>(out, static_cast<std::uint64_t>(forest.oob_votes.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(forest.oob_votes.cols()));
  for (Eigen::Index i = 0; i < forest.oob_votes.rows(); ++i) {
    for (Eigen::Index j = 0; j < forest.oob_votes.cols(); ++j) put<double>(out, forest.oob_votes(i, j));
  }
  put_vector(out, forest.oob_coverage);
  if (!out) throw IoError("failed writing forest bundle");
}

void save_forest(const std::filesystem::path& path, const Forest& forest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  save_forest(out, forest);
}

Forest load_forest(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw MalformedInput("not a forest bundle");
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion) throw MalformedInput("unsupported forest bundle version " + std::to_string(version));
  Forest f;
  f.config.n_trees = get<std::int32_t>(in);
  f.config.n_split_features = get<std::int32_t>(in);
  f.config.min_node_size = get<std::int32_t>(in);
  f.config.seed = get<std::uint64_t>(in);
  f.num_features = get<std::int32_t>(in);
  const auto k = get<std::uint32_t>(in);
  for (std::uint32_t c = 0; c < k; ++c) f.class_names.push_back(get_string(in));
  const auto n_trees = get<std::uint64_t>(in);
  f.trees.resize(n_trees);
  for (auto& t : f.trees) {
    t.num_classes = static_cast<int>(k);
    t.split_feature = get_vector<int>(in);
    t.split_threshold = get_vector<double>(in);
    t.left = get_vector<int>(in);
    t.right = get_vector<int>(in);
    t.leaf_class = get_vector<int>(in);
    t.count_offset = get_vector<int>(in);
    t.leaf_counts = get_vector<std::uint32_t>(in);
    t.bag = get_vector<std::uint32_t>(in);
    const auto nodes = t.split_feature.size();
    if (nodes == 0 || t.split_threshold.size() != nodes || t.left.size() != nodes || t.right.size() != nodes ||
        t.leaf_class.size() != nodes || t.count_offset.size() != nodes) {
      throw MalformedInput("corrupt forest bundle (node arrays)");
    }
  }
  const auto rows = get<std::uint64_t>(in);
  const auto cols = get<std::uint64_t>(in);
  f.oob_votes.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < f.oob_votes.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.oob_votes.cols(); ++j) f.oob_votes(i, j) = get<double>(in);
  }
  f.oob_coverage = get_vector<int>(in);
  return f;
}

Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return load_forest(in);
}

}  // namespace rfbn
