#include "rfbn/vote_model.hpp"

#include "rfbn/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace rfbn {

namespace {

constexpr double kVoteTolerance = 1e-9;

std::uint64_t ipow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (r > std::numeric_limits<std::uint64_t>::max() / base) throw InvalidArgument("parameter count overflows");
    r *= base;
  }
  return r;
}

void check_data(const BinMatrix& data, int n_bins) {
  if (data.rows() == 0) throw InvalidArgument("discrete data is empty");
  if (n_bins < 1) throw InvalidArgument("n_bins must be positive");
  if (data.size() > 0 && (data.minCoeff() < 0 || data.maxCoeff() >= n_bins)) {
    throw InvalidArgument("bin index outside [0, n_bins)");
  }
}

// Counts N[config][bin] for `child` with parents as base-n_bins digits,
// first parent most significant.
std::vector<std::uint32_t> family_counts(int child, std::span<const int> parents, const BinMatrix& data,
                                         int n_bins) {
  const auto rows = ipow(static_cast<std::uint64_t>(n_bins), static_cast<int>(parents.size()));
  if (rows * static_cast<std::uint64_t>(n_bins) > (1ull << 28)) {
    throw InvalidArgument("parent set too large for a dense count table");
  }
  std::vector<std::uint32_t> counts(rows * static_cast<std::size_t>(n_bins), 0);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    std::size_t cfg = 0;
    for (int p : parents) cfg = cfg * static_cast<std::size_t>(n_bins) + static_cast<std::size_t>(data(i, p));
    ++counts[cfg * static_cast<std::size_t>(n_bins) + static_cast<std::size_t>(data(i, child))];
  }
  return counts;
}

double entropy(const BinMatrix& data, int col, int n_bins) {
  std::vector<double> counts(static_cast<std::size_t>(n_bins), 0.0);
  for (Eigen::Index i = 0; i < data.rows(); ++i) counts[static_cast<std::size_t>(data(i, col))] += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0) {
      const double p = c / static_cast<double>(data.rows());
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace

Discretizer::Discretizer(std::vector<double> edges) : edges_(std::move(edges)) {
  if (edges_.size() < 2) throw InvalidArgument("a discretizer needs at least one bin");
  if (edges_.front() != 0.0 || edges_.back() != 1.0) throw InvalidArgument("bin edges must span [0, 1]");
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (!(edges_[i] > edges_[i - 1])) throw InvalidArgument("bin edges must be strictly increasing");
  }
}

Discretizer Discretizer::equal_width(int n_bins) {
  if (n_bins < 1) throw InvalidArgument("n_bins must be positive");
  std::vector<double> edges(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b) edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / n_bins;
  edges.back() = 1.0;
  return Discretizer(std::move(edges));
}

Discretizer Discretizer::quantile(const Matrix& votes, int n_bins) {
  if (n_bins < 1) throw InvalidArgument("n_bins must be positive");
  if (votes.size() == 0) return equal_width(n_bins);
  std::vector<double> all(votes.data(), votes.data() + votes.size());
  std::sort(all.begin(), all.end());
  std::vector<double> edges{0.0};
  for (int b = 1; b < n_bins; ++b) {
    const double pos = static_cast<double>(b) / n_bins * static_cast<double>(all.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, all.size() - 1);
    const double q = all[lo] + (pos - static_cast<double>(lo)) * (all[hi] - all[lo]);
    if (q > edges.back() && q < 1.0) edges.push_back(q);
  }
  edges.push_back(1.0);
  return Discretizer(std::move(edges));
}

int Discretizer::bin(double v) const {
  if (!(v >= -kVoteTolerance && v <= 1.0 + kVoteTolerance)) {
    throw InvalidArgument("vote value " + std::to_string(v) + " outside [0, 1]");
  }
  v = std::clamp(v, 0.0, 1.0);
  const auto it = std::upper_bound(edges_.begin(), edges_.end(), v);
  const int b = static_cast<int>(it - edges_.begin()) - 1;
  return std::min(b, n_bins() - 1);
}

Eigen::VectorXi discretize(const Eigen::Ref<const Vector>& votes, const Discretizer& d) {
  Eigen::VectorXi bins(votes.size());
  for (Eigen::Index j = 0; j < votes.size(); ++j) bins[j] = d.bin(votes[j]);
  return bins;
}

BinMatrix discretize(const Matrix& votes, const Discretizer& d) {
  BinMatrix bins(votes.rows(), votes.cols());
  for (Eigen::Index j = 0; j < votes.cols(); ++j) {
    for (Eigen::Index i = 0; i < votes.rows(); ++i) bins(i, j) = d.bin(votes(i, j));
  }
  return bins;
}

std::uint64_t parameter_count(int n_bins, int n_parents) {
  if (n_bins < 2) throw InvalidArgument("parameter_count needs n_bins >= 2");
  if (n_parents < 0) throw InvalidArgument("parameter_count needs n_parents >= 0");
  return static_cast<std::uint64_t>(n_bins - 1) * ipow(static_cast<std::uint64_t>(n_bins), n_parents);
}

bool NetworkStructure::is_acyclic() const {
  const int k = num_nodes();
  std::vector<int> position(static_cast<std::size_t>(k), -1);
  if (static_cast<int>(order.size()) != k) return false;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] < 0 || order[i] >= k || position[static_cast<std::size_t>(order[i])] >= 0) return false;
    position[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  }
  for (int v = 0; v < k; ++v) {
    for (int p : parents[static_cast<std::size_t>(v)]) {
      if (position[static_cast<std::size_t>(p)] >= position[static_cast<std::size_t>(v)]) return false;
    }
  }
  return true;
}

std::size_t NetworkStructure::num_edges() const {
  std::size_t e = 0;
  for (const auto& p : parents) e += p.size();
  return e;
}

double k2_local_score(int child, std::span<const int> parents, const BinMatrix& data, int n_bins, double alpha) {
  check_data(data, n_bins);
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (child < 0 || child >= data.cols()) throw InvalidArgument("child index out of range");
  for (int p : parents) {
    if (p < 0 || p >= data.cols() || p == child) throw InvalidArgument("invalid parent index");
  }
  const auto counts = family_counts(child, parents, data, n_bins);
  const double lg_alpha = std::lgamma(alpha);
  const double lg_row_prior = std::lgamma(n_bins * alpha);
  const auto bins = static_cast<std::size_t>(n_bins);
  double score = 0.0;
  for (std::size_t row = 0; row < counts.size() / bins; ++row) {
    std::uint64_t total = 0;
    double cells = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const auto c = counts[row * bins + b];
      if (c == 0) continue;
      total += c;
      cells += std::lgamma(static_cast<double>(c) + alpha) - lg_alpha;
    }
    if (total == 0) continue;
    score += lg_row_prior - std::lgamma(static_cast<double>(total) + n_bins * alpha) + cells;
  }
  return score;
}

double network_score(const NetworkStructure& s, const BinMatrix& data, int n_bins, double alpha) {
  double total = 0.0;
  for (int v = 0; v < s.num_nodes(); ++v) {
    total += k2_local_score(v, s.parents[static_cast<std::size_t>(v)], data, n_bins, alpha);
  }
  return total;
}

std::vector<int> node_order(const BinMatrix& data, int n_bins, NodeOrder how) {
  std::vector<int> order(static_cast<std::size_t>(data.cols()));
  std::iota(order.begin(), order.end(), 0);
  if (how == NodeOrder::descending_entropy) {
    std::vector<double> h(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) h[j] = entropy(data, static_cast<int>(j), n_bins);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return h[static_cast<std::size_t>(a)] > h[static_cast<std::size_t>(b)];
    });
  }
  return order;
}

StructureSearch learn_structure(const BinMatrix& data, std::vector<int> order, int max_parents, int n_bins,
                                double alpha) {
  check_data(data, n_bins);
  const int k = static_cast<int>(data.cols());
  if (max_parents < 0) throw InvalidArgument("max_parents must be >= 0");
  {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expected(static_cast<std::size_t>(k));
    std::iota(expected.begin(), expected.end(), 0);
    if (sorted != expected) throw InvalidArgument("order is not a permutation of the nodes");
  }

  StructureSearch out;
  out.structure.order = order;
  out.structure.max_parents = max_parents;
  out.structure.parents.assign(static_cast<std::size_t>(k), {});
  out.local_scores.assign(static_cast<std::size_t>(k), 0.0);

  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const int child = order[pos];
    auto& parents = out.structure.parents[static_cast<std::size_t>(child)];
    double current = k2_local_score(child, parents, data, n_bins, alpha);
    while (static_cast<int>(parents.size()) < max_parents) {
      int best_parent = -1;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < pos; ++q) {
        const int candidate = order[q];
        if (std::find(parents.begin(), parents.end(), candidate) != parents.end()) continue;
        std::vector<int> trial = parents;
        trial.push_back(candidate);
        const double s = k2_local_score(child, trial, data, n_bins, alpha);
        if (s > best_score) {
          best_score = s;
          best_parent = candidate;
        }
      }
      if (best_parent < 0 || !(best_score > current)) break;
      out.accepted.push_back({child, best_parent, current, best_score});
      parents.push_back(best_parent);
      current = best_score;
    }
    out.local_scores[static_cast<std::size_t>(child)] = current;
    out.total_score += current;
  }
  return out;
}

Eigen::Index CpdTable::row_for(const Eigen::Ref<const Eigen::VectorXi>& bins) const {
  Eigen::Index row = 0;
  for (int p : parents) row = row * n_bins + bins[p];
  return row;
}

std::vector<CpdTable> fit_cpds(const NetworkStructure& s, const BinMatrix& data, int n_bins, double alpha,
                               MapEstimator estimator) {
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (estimator == MapEstimator::dirichlet_mode && !(alpha > 1.0)) {
    throw InvalidArgument("the Dirichlet-mode estimator needs alpha > 1");
  }
  if (data.cols() != s.num_nodes()) throw InvalidArgument("structure and data disagree on node count");
  if (data.rows() > 0) check_data(data, n_bins);
  const double pseudo = estimator == MapEstimator::posterior_mean ? alpha : alpha - 1.0;

  std::vector<CpdTable> cpds(static_cast<std::size_t>(s.num_nodes()));
  for (int v = 0; v < s.num_nodes(); ++v) {
    auto& cpd = cpds[static_cast<std::size_t>(v)];
    cpd.node = v;
    cpd.parents = s.parents[static_cast<std::size_t>(v)];
    cpd.n_bins = n_bins;
    const auto rows = static_cast<Eigen::Index>(ipow(static_cast<std::uint64_t>(n_bins), static_cast<int>(cpd.parents.size())));
    std::vector<std::uint32_t> counts;
    if (data.rows() > 0) {
      counts = family_counts(v, cpd.parents, data, n_bins);
    } else {
      counts.assign(static_cast<std::size_t>(rows * n_bins), 0);
    }
    cpd.probs.resize(rows, n_bins);
    for (Eigen::Index r = 0; r < rows; ++r) {
      double total = 0.0;
      for (Eigen::Index b = 0; b < n_bins; ++b) total += counts[static_cast<std::size_t>(r * n_bins + b)];
      const double denom = total + n_bins * pseudo;
      for (Eigen::Index b = 0; b < n_bins; ++b) {
        cpd.probs(r, b) = (counts[static_cast<std::size_t>(r * n_bins + b)] + pseudo) / denom;
      }
    }
    cpd.log_probs = cpd.probs.array().log().matrix();
  }
  return cpds;
}

double VoteModel::log_joint(const Eigen::Ref<const Eigen::VectorXi>& bins) const {
  double total = 0.0;
  for (const auto& cpd : cpds) total += cpd.log_probs(cpd.row_for(bins), bins[cpd.node]);
  return total;
}

double VoteModel::log_joint(const Eigen::Ref<const Vector>& votes) const {
  if (votes.size() != num_nodes()) {
    throw InvalidArgument("vote vector has " + std::to_string(votes.size()) + " entries, model expects " +
                          std::to_string(num_nodes()));
  }
  return log_joint(discretize(votes, discretizer));
}

VoteModel fit_vote_model(const Matrix& votes, std::vector<std::string> class_names, const VoteModelConfig& config) {
  if (static_cast<std::size_t>(votes.cols()) != class_names.size()) {
    throw InvalidArgument("vote matrix width does not match the class list");
  }
  if (config.n_bins < 2) throw InvalidArgument("n_bins must be at least 2, got " + std::to_string(config.n_bins));
  if (config.max_parents < 0) throw InvalidArgument("max_parents must be non-negative");
  if (!(config.alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  VoteModel model;
  model.class_names = std::move(class_names);
  model.alpha = config.alpha;
  model.estimator = config.estimator;
  model.discretizer = config.binning == Binning::quantile ? Discretizer::quantile(votes, config.n_bins)
                                                          : Discretizer::equal_width(config.n_bins);
  const int n_bins = model.discretizer.n_bins();
  const BinMatrix bins = discretize(votes, model.discretizer);
  auto search = learn_structure(bins, node_order(bins, n_bins, config.order), config.max_parents, n_bins,
                                config.alpha);
  model.structure = std::move(search.structure);
  model.network_score = search.total_score;
  model.cpds = fit_cpds(model.structure, bins, n_bins, config.alpha, config.estimator);
  return model;
}

double joint_probability(const VoteModel& model, const Eigen::Ref<const Vector>& votes) {
  return std::exp(model.log_joint(votes));
}

double score_from_log_joint(double log_joint) {
  const double score = -std::expm1(log_joint);
  return std::clamp(score, 0.0, std::nextafter(1.0, 0.0));
}

double outlier_score(const VoteModel& model, const Eigen::Ref<const Vector>& votes) {
  return score_from_log_joint(model.log_joint(votes));
}

namespace {

std::string to_string(MapEstimator e) {
  return e == MapEstimator::posterior_mean ? "posterior_mean" : "dirichlet_mode";
}

MapEstimator parse_estimator(const std::string& s) {
  if (s == "posterior_mean") return MapEstimator::posterior_mean;
  if (s == "dirichlet_mode") return MapEstimator::dirichlet_mode;
  throw MalformedInput("unknown estimator '" + s + "'");
}

}  // namespace

std::string vote_model_to_json(const VoteModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "rfbn-votemodel";
  j["version"] = 1;
  j["class_names"] = model.class_names;
  j["alpha"] = model.alpha;
  j["estimator"] = to_string(model.estimator);
  j["n_bins"] = model.discretizer.n_bins();
  j["edges"] = model.discretizer.edges();
  j["order"] = model.structure.order;
  j["max_parents"] = model.structure.max_parents;
  j["parents"] = model.structure.parents;
  j["network_score"] = model.network_score;
  auto& cpds = j["cpds"] = nlohmann::ordered_json::array();
  for (const auto& cpd : model.cpds) {
    nlohmann::ordered_json c;
    c["node"] = cpd.node;
    c["parents"] = cpd.parents;
    c["rows"] = cpd.probs.rows();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(cpd.probs.size()));
    for (Eigen::Index r = 0; r < cpd.probs.rows(); ++r) {
      for (Eigen::Index b = 0; b < cpd.probs.cols(); ++b) flat.push_back(cpd.probs(r, b));
    }
    c["probs"] = std::move(flat);
    cpds.push_back(std::move(c));
  }
  return j.dump(1);
}

VoteModel vote_model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("vote model is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "rfbn-votemodel") throw MalformedInput("not a vote model bundle");
    VoteModel m;
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.alpha = j.at("alpha").get<double>();
    m.estimator = parse_estimator(j.at("estimator").get<std::string>());
    m.discretizer = Discretizer(j.at("edges").get<std::vector<double>>());
    m.structure.order = j.at("order").get<std::vector<int>>();
    m.structure.max_parents = j.at("max_parents").get<int>();
    m.structure.parents = j.at("parents").get<std::vector<std::vector<int>>>();
    m.network_score = j.value("network_score", 0.0);
    const int n_bins = m.discretizer.n_bins();
    for (const auto& c : j.at("cpds")) {
      CpdTable cpd;
      cpd.node = c.at("node").get<int>();
      cpd.parents = c.at("parents").get<std::vector<int>>();
      cpd.n_bins = n_bins;
      const auto rows = c.at("rows").get<Eigen::Index>();
      const auto flat = c.at("probs").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(flat.size()) != rows * n_bins) throw MalformedInput("CPD table size mismatch");
      cpd.probs.resize(rows, n_bins);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index b = 0; b < n_bins; ++b) cpd.probs(r, b) = flat[static_cast<std::size_t>(r * n_bins + b)];
      }
      cpd.log_probs = cpd.probs.array().log().matrix();
      m.cpds.push_back(std::move(cpd));
    }
    if (m.cpds.size() != m.class_names.size() || m.structure.parents.size() != m.class_names.size() ||
        !m.structure.is_acyclic()) {
      throw MalformedInput("inconsistent vote model bundle");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("malformed vote model: ") + e.what());
  }
}

void save_vote_model(const std::filesystem::path& path, const VoteModel& model) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << vote_model_to_json(model) << '\n';
}

VoteModel load_vote_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return vote_model_from_json(buf.str());
}

}  // namespace rfbn
