#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hgpmil/core_model.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil::clustering {

/// Embeddings with the two guide scores appended: row i = [X_i ; w*C_i ; w*A_i].
struct ExtendedFeatures {
    Matrix matrix;
    double score_weight = 1.0;
};

ExtendedFeatures extend_features(const Bag& bag, const ScoreVector& cellularity, const ScoreVector& architecture,
                                 double score_weight);

struct KMeansOptions {
    int k = 50;
    std::uint64_t seed = 42;
    double tol = 1e-6;
    int max_iter = 100;
    int restarts = 3;
};

struct ClusterModel {
    int k = 0;
    std::vector<int> assignments;  // one per instance, in [0, k)
    Matrix centroids;              // k x (D + 2)
    double objective = 0.0;        // sum of squared distances to assigned centroids
    int iterations_run = 0;        // of the winning restart
    std::uint64_t seed = 0;
    /// Objective after seeding and after every Lloyd iteration of the winning restart.
    std::vector<double> objective_history;

    std::size_t nonempty_clusters() const;
};

/// k-means++ seeding followed by Lloyd iterations, best of `restarts`.
/// Errors with KTooLarge when k exceeds the number of rows.
ClusterModel kmeans(const ExtendedFeatures& ext, const KMeansOptions& opts);
ClusterModel kmeans(const Matrix& points, const KMeansOptions& opts);

/// Sum of squared distances from each row to its assigned centroid.
double compute_objective(const Matrix& points, std::span<const int> assignments, const Matrix& centroids);

/// Ascending instance indices assigned to cluster k.
std::vector<std::size_t> cluster_members(const ClusterModel& model, int k);

/// Seed for one slide's clustering, independent of scheduling.
std::uint64_t slide_seed(std::uint64_t global_seed, const std::string& slide_id);

std::string sidecar_json(const ClusterModel& model, const std::string& slide_id);
/// Restores assignments/objective/seed/k from a sidecar; centroids come from
/// the companion container.
ClusterModel model_from_sidecar(const std::string& json_text, Matrix centroids);

} // namespace hgpmil::clustering
