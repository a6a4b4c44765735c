#pragma once

#include "rfbn/candidates.hpp"
#include "rfbn/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace rfbn {

// Column-wise z-scores; constant columns become zero.
Matrix standardize(const Matrix& x);

struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;  // k x d
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeds; the best of `restarts` runs by inertia.
KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts = 10, int max_iter = 300);

// Mean silhouette coefficient; singleton clusters contribute 0.
double silhouette(const Matrix& x, const std::vector<int>& labels);

struct ClusterResult {
  std::vector<int> assignments;  // aligned with the candidate list
  int k = 0;
  double silhouette = 0.0;
};

// Clusters candidates on standardized, median-imputed features. Without a
// fixed k, picks k in [2, 10] with the highest silhouette.
ClusterResult cluster_candidates(const std::vector<CandidateRecord>& candidates, std::optional<int> k,
                                 std::uint64_t seed = 0);

// Color-magnitude table: id,rank,score,color,mean_mag,cluster
void write_cmd_export(std::ostream& out, const std::vector<CandidateRecord>& candidates,
                      const ClusterResult& clusters);

// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace rfbn
