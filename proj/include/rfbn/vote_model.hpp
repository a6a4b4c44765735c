#pragma once

#include "rfbn/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rfbn {

// Maps a vote in [0, 1] to one of n_bins half-open intervals; the top bin
// is closed on the right so that 1.0 lands in the last bin.
class Discretizer {
 public:
  Discretizer() = default;
  explicit Discretizer(std::vector<double> edges);

  static Discretizer equal_width(int n_bins);
  // Quantile edges over all entries of `votes`; duplicate edges are merged,
  // so the result may have fewer than n_bins bins.
  static Discretizer quantile(const Matrix& votes, int n_bins);

  int n_bins() const noexcept { return static_cast<int>(edges_.size()) - 1; }
  const std::vector<double>& edges() const noexcept { return edges_; }
  int bin(double v) const;

 private:
  std::vector<double> edges_;
};

Eigen::VectorXi discretize(const Eigen::Ref<const Vector>& votes, const Discretizer& d);
BinMatrix discretize(const Matrix& votes, const Discretizer& d);

// Free parameters of one node's CPD: (N_bins - 1) * N_bins^N_parents.
std::uint64_t parameter_count(int n_bins, int n_parents);

struct NetworkStructure {
  std::vector<int> order;                 // topological order (a permutation of node ids)
  std::vector<std::vector<int>> parents;  // per node id, in order of acceptance
  int max_parents = 2;

  int num_nodes() const noexcept { return static_cast<int>(parents.size()); }
  bool is_acyclic() const;
  std::size_t num_edges() const;
};

// log Dirichlet-multinomial marginal likelihood of `child` given `parents`
// with a symmetric pseudo-count alpha per outcome.
double k2_local_score(int child, std::span<const int> parents, const BinMatrix& data, int n_bins, double alpha);

double network_score(const NetworkStructure& s, const BinMatrix& data, int n_bins, double alpha);

enum class NodeOrder { class_order, descending_entropy };

std::vector<int> node_order(const BinMatrix& data, int n_bins, NodeOrder how);

struct EdgeAcceptance {
  int child = 0;
  int parent = 0;
  double score_before = 0.0;
  double score_after = 0.0;
};

struct StructureSearch {
  NetworkStructure structure;
  std::vector<double> local_scores;  // per node id
  double total_score = 0.0;
  std::vector<EdgeAcceptance> accepted;
};

// Greedy order-constrained search: for each node in `order`, keep adding
// the predecessor that most increases the local score while the increase is
// strictly positive and fewer than max_parents are chosen.
StructureSearch learn_structure(const BinMatrix& data, std::vector<int> order, int max_parents, int n_bins,
                                double alpha);

enum class MapEstimator {
  posterior_mean,  // (N_b + a) / (N + N_bins a)
  dirichlet_mode,     // (N_b + a - 1) / (N + N_bins (a - 1)), needs a > 1
};

// One multinomial over n_bins outcomes per parent configuration. Row index
// treats the first parent as the most significant digit in base n_bins.
struct CpdTable {
  int node = 0;
  std::vector<int> parents;
  int n_bins = 0;
  Matrix probs;      // rows = n_bins^|parents|, cols = n_bins
  Matrix log_probs;  // cached log of probs

  Eigen::Index row_for(const Eigen::Ref<const Eigen::VectorXi>& bins) const;
  std::uint64_t stored_cells() const noexcept { return static_cast<std::uint64_t>(probs.size()); }
  std::uint64_t free_parameters() const noexcept {
    return static_cast<std::uint64_t>(probs.rows()) * static_cast<std::uint64_t>(n_bins - 1);
  }
};

std::vector<CpdTable> fit_cpds(const NetworkStructure& s, const BinMatrix& data, int n_bins, double alpha,
                               MapEstimator estimator = MapEstimator::posterior_mean);

enum class Binning { equal_width, quantile };

struct VoteModelConfig {
  int n_bins = 20;
  int max_parents = 2;
  double alpha = 4.0;
  NodeOrder order = NodeOrder::class_order;
  Binning binning = Binning::equal_width;
  MapEstimator estimator = MapEstimator::posterior_mean;
};

struct VoteModel {
  Discretizer discretizer;
  NetworkStructure structure;
  std::vector<CpdTable> cpds;  // indexed by node id
  std::vector<std::string> class_names;
  double alpha = 4.0;
  MapEstimator estimator = MapEstimator::posterior_mean;
  double network_score = 0.0;

  int num_nodes() const noexcept { return static_cast<int>(cpds.size()); }
  double log_joint(const Eigen::Ref<const Eigen::VectorXi>& bins) const;
  double log_joint(const Eigen::Ref<const Vector>& votes) const;
};

VoteModel fit_vote_model(const Matrix& votes, std::vector<std::string> class_names, const VoteModelConfig& config);

double joint_probability(const VoteModel& model, const Eigen::Ref<const Vector>& votes);

// 1 - joint probability, kept strictly below 1 even when the probability
// underflows relative to 1 in double precision.
double outlier_score(const VoteModel& model, const Eigen::Ref<const Vector>& votes);
double score_from_log_joint(double log_joint);

void save_vote_model(const std::filesystem::path& path, const VoteModel& model);
VoteModel load_vote_model(const std::filesystem::path& path);
std::string vote_model_to_json(const VoteModel& model);
VoteModel vote_model_from_json(const std::string& text);

}  // namespace rfbn
