#include "rfbn/clustering.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"
#include "rfbn/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

namespace rfbn {

Matrix standardize(const Matrix& x) {
  Matrix z = x;
  if (x.rows() == 0) return z;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / static_cast<double>(x.rows());
    const double sd = std::sqrt(var);
    if (sd > 0.0) {
      z.col(j) = (x.col(j).array() - mean) / sd;
    } else {
      z.col(j).setZero();
    }
  }
  return z;
}

namespace {

KMeansResult lloyd(const Matrix& x, int k, Rng& rng, int max_iter) {
  const auto n = x.rows();
  KMeansResult r;
  r.centroids.resize(k, x.cols());
  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  r.centroids.row(0) = x.row(first(rng));
  Vector d2 = (x.rowwise() - r.centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        target -= d2[pick];
        if (target <= 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    r.centroids.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - r.centroids.row(c)).rowwise().squaredNorm());
  }

  r.labels.assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = iter == 0;
    r.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      const double dist = (r.centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      r.inertia += dist;
      if (r.labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        r.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) r.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
  }
  return r;
}

}  // namespace

KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts, int max_iter) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (k > x.rows()) throw InvalidArgument("k exceeds the number of points");
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    auto run = lloyd(x, k, rng, max_iter);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

double silhouette(const Matrix& x, const std::vector<int>& labels) {
  const auto n = x.rows();
  if (n < 2) return 0.0;
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  double total = 0.0;
  std::vector<double> sum(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += (x.row(i) - x.row(j)).norm();
    }
    const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    if (sizes[own] <= 1) continue;
    const double a = sum[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c) {
      if (c != own && sizes[c] > 0) b = std::min(b, sum[c] / sizes[c]);
    }
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

ClusterResult cluster_candidates(const std::vector<CandidateRecord>& candidates, std::optional<int> k,
                                 std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(candidates.size());
  if (k && *k < 1) throw InvalidArgument("k_clusters must be >= 1");
  if (k && *k > n) {
    throw InvalidArgument("k_clusters (" + std::to_string(*k) + ") exceeds candidate count (" +
                          std::to_string(n) + ")");
  }
  if (n == 0) throw InvalidArgument("no candidates to cluster");

  Matrix x(n, kNumFeatures);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = candidates[static_cast<std::size_t>(i)].features.values.transpose();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> valid;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isfinite(x(i, j))) valid.push_back(x(i, j));
    }
    double median = 0.0;
    if (!valid.empty()) {
      std::sort(valid.begin(), valid.end());
      median = valid.size() % 2 ? valid[valid.size() / 2]
                                : 0.5 * (valid[valid.size() / 2 - 1] + valid[valid.size() / 2]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(x(i, j))) x(i, j) = median;
    }
  }
  const Matrix z = standardize(x);

  ClusterResult out;
  if (k) {
    const auto km = kmeans(z, *k, seed);
    out.assignments = km.labels;
    out.k = *k;
    out.silhouette = *k > 1 ? silhouette(z, km.labels) : 0.0;
    return out;
  }
  out.silhouette = -std::numeric_limits<double>::infinity();
  const int k_max = static_cast<int>(std::min<Eigen::Index>(10, n - 1));
  for (int trial = 2; trial <= k_max; ++trial) {
    const auto km = kmeans(z, trial, seed);
    const double s = silhouette(z, km.labels);
    if (s > out.silhouette) {
      out.silhouette = s;
      out.assignments = km.labels;
      out.k = trial;
    }
  }
  if (out.k == 0) {
    out.assignments.assign(candidates.size(), 0);
    out.k = 1;
    out.silhouette = 0.0;
  }
  return out;
}

void write_cmd_export(std::ostream& out, const std::vector<CandidateRecord>& candidates,
                      const ClusterResult& clusters) {
  out << "id,rank,score,color,mean_mag,cluster\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    out << c.object_id << ',' << c.rank << ',' << detail::format_double(c.score) << ','
        << detail::format_double(c.features[Feature::color]) << ',' << detail::format_double(c.mean_mag) << ','
        << (i < clusters.assignments.size() ? clusters.assignments[i] : -1) << '\n';
  }
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw InvalidArgument("labelings differ in length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto choose2 = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, v] : joint) index += choose2(v);
  for (const auto& [_, v] : ra) sa += choose2(v);
  for (const auto& [_, v] : rb) sb += choose2(v);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace rfbn
