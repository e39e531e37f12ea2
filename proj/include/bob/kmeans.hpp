#pragma once

// Lloyd k-means with k-means++ seeding, restarts and empty-cluster repair.
// Points may carry non-negative weights; the unweighted case is all ones.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace bob {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KMeansConfig {
  int K = 20;
  int max_iters = 100;
  double tol = 1e-6;  // stop when the relative inertia drop falls below this
  std::uint64_t seed = 0;
  int n_init = 4;

  void validate() const;
};

void to_json(nlohmann::json& j, const KMeansConfig& c);
void from_json(const nlohmann::json& j, KMeansConfig& c);

struct KMeansResult {
  RowMatrix centroids;          // K x d
  std::vector<int> assignments;  // per point
  std::vector<double> cluster_weight;
  double inertia = 0.0;      // sum of w_i * |x_i - c|^2
  double quant_error = 0.0;  // weighted mean of |x_i - c|
  int iterations = 0;
  int restart = 0;  // index of the winning restart
  std::vector<double> inertia_trace;  // after each Lloyd iteration of the winner
};

KMeansResult kmeans(const RowMatrix& points, const KMeansConfig& cfg);
KMeansResult kmeans_weighted(const RowMatrix& points, std::span<const double> weights,
                             const KMeansConfig& cfg);

// Index of the nearest row of `centroids`; ties go to the lowest index.
int nearest_centroid(const RowMatrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x);

}  // namespace bob
