#pragma once

// k-means topic clustering of embedded suggestion tokens, choice of k, and
// helpers for the manual labeling step.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsbias/embed.hpp"

namespace qsbias {

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;
  int restarts = 10;
};

// Result of one k-means fit. `assignment[i]` is the cluster of
// `tokens[i]`; every cluster is nonempty and every point sits with its
// nearest centroid (lowest index on ties).
struct ClusterModel {
  int k = 0;
  std::vector<std::string> tokens;
  Eigen::MatrixXd centroids;  // k x d
  std::vector<int> assignment;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int iterations_run = 0;
  // Inertia after each assignment step; non-increasing.
  std::vector<double> inertia_history;

  std::size_t cluster_size(int c) const;
};

// Token -> cluster index, the form consumed by the metrics stage.
struct ClusterAssignment {
  int k = 0;
  std::map<std::string, int, std::less<>> cluster_of;

  static ClusterAssignment from_model(const ClusterModel& model);
};

// One k-means++ initialised Lloyd run. Throws infeasible when k < 2 or
// there are fewer distinct points than k, validation on non-finite input.
ClusterModel kmeans(const TokenVectors& data, int k, std::uint64_t seed, int max_iter = 300,
                    double tol = 1e-6);

// Lowest-inertia model over `restarts` runs seeded from `seed`.
ClusterModel kmeans_best_of(const TokenVectors& data, int k, std::uint64_t seed,
                            const KMeansOptions& options = {});

std::size_t count_distinct_rows(const Eigen::MatrixXd& points);

// Mean silhouette with Euclidean distance. Members of singleton clusters
// score 0, and 0/0 is taken as 0.
double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment);

struct KCandidate {
  int k = 0;
  double inertia = 0.0;
  double silhouette = 0.0;
};

struct KSelectionReport {
  std::vector<KCandidate> candidates;
  int chosen_k = 0;
  // "only candidate", "silhouette", "elbow" or "smallest k".
  std::string rule;
};

// Highest mean silhouette wins; ties go to the largest second difference of
// inertia, then to the smaller k.
KSelectionReport select_k(const TokenVectors& data, int k_min, int k_max, std::uint64_t seed,
                          const KMeansOptions& options = {});

struct LabelCandidate {
  std::string token;
  double distance = 0.0;
};

// Per cluster, up to top_n members closest to their centroid.
std::vector<std::vector<LabelCandidate>> label_clusters(const ClusterModel& model,
                                                        const TokenVectors& data, int top_n);

// CSV token,cluster_index,distance_to_centroid in token order of the model.
std::string write_assignment_csv(const ClusterModel& model, const TokenVectors& data);
ClusterAssignment read_assignment_csv(std::string_view csv);

// Human-authored CSV cluster_index,label.
std::map<int, std::string> read_cluster_labels(std::string_view csv);

}  // namespace qsbias
