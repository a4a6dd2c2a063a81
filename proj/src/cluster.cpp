#include "qsbias/cluster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "qsbias/error.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

std::size_t ClusterModel::cluster_size(int c) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), c));
}

ClusterAssignment ClusterAssignment::from_model(const ClusterModel& model) {
  ClusterAssignment out;
  out.k = model.k;
  for (std::size_t i = 0; i < model.tokens.size(); ++i) {
    out.cluster_of.emplace(model.tokens[i], model.assignment[i]);
  }
  return out;
}

std::size_t count_distinct_rows(const Eigen::MatrixXd& points) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    rows[i].resize(static_cast<std::size_t>(points.cols()));
    for (Eigen::Index j = 0; j < points.cols(); ++j) rows[i][j] = points(i, j);
  }
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

void check_input(const TokenVectors& data, int k) {
  if (k < 2) throw Error(ErrorKind::infeasible, "k must be at least 2");
  if (data.vectors.cols() < 1) throw Error(ErrorKind::infeasible, "vectors must have d >= 1");
  if (static_cast<std::size_t>(data.vectors.rows()) != data.tokens.size()) {
    throw Error(ErrorKind::contract, "token count does not match vector rows");
  }
  if (!data.vectors.allFinite()) throw Error(ErrorKind::validation, "non-finite vector component");
  const std::size_t distinct = count_distinct_rows(data.vectors);
  if (distinct < static_cast<std::size_t>(k)) {
    throw Error(ErrorKind::infeasible, "only " + std::to_string(distinct) +
                                           " distinct points for k=" + std::to_string(k));
  }
}

MatrixXd kmeans_plus_plus(const MatrixXd& x, int k, Rng& rng) {
  const Index n = x.rows();
  MatrixXd centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const Index pick = static_cast<Index>(rng.weighted(d2));
    centers.row(c) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centers.row(c)).squaredNorm());
  }
  return centers;
}

// Nearest centroid per point, lowest index on ties.
void assign_points(const MatrixXd& x, const MatrixXd& centers, std::vector<int>& assignment,
                   std::vector<double>& d2) {
  for (Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = (x.row(i) - centers.row(0)).squaredNorm();
    for (Index c = 1; c < centers.rows(); ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[i] = best;
    d2[i] = best_d;
  }
}

// Gives each empty cluster the point farthest from its centroid, taken from
// a cluster that can spare it. Returns true if anything changed.
bool repair_empty(const MatrixXd& x, MatrixXd& centers, std::vector<int>& assignment,
                  std::vector<double>& d2) {
  const int k = static_cast<int>(centers.rows());
  std::vector<std::size_t> sizes(k, 0);
  for (int a : assignment) ++sizes[a];
  bool changed = false;
  for (int c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    Index far = -1;
    for (Index i = 0; i < x.rows(); ++i) {
      if (sizes[assignment[i]] < 2) continue;
      if (far < 0 || d2[i] > d2[far]) far = i;
    }
    if (far < 0) throw Error(ErrorKind::infeasible, "cannot repair empty cluster");
    --sizes[assignment[far]];
    assignment[far] = c;
    ++sizes[c];
    d2[far] = 0.0;
    centers.row(c) = x.row(far);
    changed = true;
  }
  return changed;
}

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

ClusterModel kmeans(const TokenVectors& data, int k, std::uint64_t seed, int max_iter, double tol) {
  check_input(data, k);
  if (max_iter < 1) throw Error(ErrorKind::contract, "max_iter must be >= 1");
  if (!(tol >= 0.0)) throw Error(ErrorKind::contract, "tol must be >= 0");

  const MatrixXd& x = data.vectors;
  const Index n = x.rows();
  Rng rng(seed);
  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.tokens = data.tokens;
  model.centroids = kmeans_plus_plus(x, k, rng);

  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
  for (int it = 1; it <= max_iter; ++it) {
    const std::vector<int> previous = assignment;
    assign_points(x, model.centroids, assignment, d2);
    repair_empty(x, model.centroids, assignment, d2);
    model.inertia_history.push_back(sum_of(d2));
    model.iterations_run = it;

    MatrixXd means = MatrixXd::Zero(k, x.cols());
    std::vector<std::size_t> sizes(k, 0);
    for (Index i = 0; i < n; ++i) {
      means.row(assignment[i]) += x.row(i);
      ++sizes[assignment[i]];
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      means.row(c) /= static_cast<double>(sizes[c]);
      shift = std::max(shift, (means.row(c) - model.centroids.row(c)).norm());
    }
    model.centroids = std::move(means);
    if (shift <= tol || assignment == previous) break;
  }

  // Final pass so that assignment and inertia refer to the returned centroids.
  for (int pass = 0; pass <= k; ++pass) {
    assign_points(x, model.centroids, assignment, d2);
    if (!repair_empty(x, model.centroids, assignment, d2)) break;
  }
  model.assignment = std::move(assignment);
  model.inertia = sum_of(d2);
  if (model.inertia < model.inertia_history.back()) model.inertia_history.push_back(model.inertia);
  return model;
}

ClusterModel kmeans_best_of(const TokenVectors& data, int k, std::uint64_t seed,
                            const KMeansOptions& options) {
  const int restarts = std::max(1, options.restarts);
  ClusterModel best;
  for (int r = 0; r < restarts; ++r) {
    ClusterModel m = kmeans(data, k, substream_seed(seed, static_cast<std::uint64_t>(r)),
                            options.max_iter, options.tol);
    if (r == 0 || m.inertia < best.inertia) best = std::move(m);
  }
  return best;
}

double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment) {
  const Index n = points.rows();
  if (static_cast<std::size_t>(n) != assignment.size()) {
    throw Error(ErrorKind::contract, "assignment length does not match points");
  }
  int k = 0;
  for (int a : assignment) {
    if (a < 0) throw Error(ErrorKind::contract, "negative cluster index");
    k = std::max(k, a + 1);
  }
  if (k < 2) throw Error(ErrorKind::contract, "silhouette needs at least two clusters");
  std::vector<std::size_t> sizes(k, 0);
  for (int a : assignment) ++sizes[a];
  for (int c = 0; c < k; ++c) {
    if (sizes[c] == 0) throw Error(ErrorKind::contract, "empty cluster " + std::to_string(c));
  }

  double total = 0.0;
  std::vector<double> sums(k);
  for (Index i = 0; i < n; ++i) {
    const int own = assignment[i];
    if (sizes[own] == 1) continue;  // contributes 0
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[assignment[j]] += (points.row(i) - points.row(j)).norm();
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

KSelectionReport select_k(const TokenVectors& data, int k_min, int k_max, std::uint64_t seed,
                          const KMeansOptions& options) {
  if (k_min < 2 || k_max < k_min) {
    throw Error(ErrorKind::configuration, "k range must satisfy 2 <= k_min <= k_max");
  }
  const std::size_t distinct = count_distinct_rows(data.vectors);
  if (static_cast<std::size_t>(k_max) > distinct) {
    throw Error(ErrorKind::infeasible, "k_max exceeds the " + std::to_string(distinct) +
                                           " distinct points");
  }
  KSelectionReport report;
  for (int k = k_min; k <= k_max; ++k) {
    const ClusterModel m =
        kmeans_best_of(data, k, substream_seed(seed, static_cast<std::uint64_t>(k)), options);
    report.candidates.push_back({k, m.inertia, silhouette(data.vectors, m.assignment)});
  }
  if (report.candidates.size() == 1) {
    report.chosen_k = k_min;
    report.rule = "only candidate";
    return report;
  }

  constexpr double tie = 1e-12;
  double best_sil = -std::numeric_limits<double>::infinity();
  for (const auto& c : report.candidates) best_sil = std::max(best_sil, c.silhouette);
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    if (report.candidates[i].silhouette >= best_sil - tie) tied.push_back(i);
  }
  if (tied.size() == 1) {
    report.chosen_k = report.candidates[tied[0]].k;
    report.rule = "silhouette";
    return report;
  }

  auto elbow = [&](std::size_t i) {
    if (i == 0 || i + 1 >= report.candidates.size()) return -std::numeric_limits<double>::infinity();
    return report.candidates[i - 1].inertia - 2.0 * report.candidates[i].inertia +
           report.candidates[i + 1].inertia;
  };
  double best_elbow = -std::numeric_limits<double>::infinity();
  for (auto i : tied) best_elbow = std::max(best_elbow, elbow(i));
  std::vector<std::size_t> elbow_tied;
  for (auto i : tied) {
    if (elbow(i) >= best_elbow - tie || (std::isinf(best_elbow) && std::isinf(elbow(i)))) {
      elbow_tied.push_back(i);
    }
  }
  report.chosen_k = report.candidates[elbow_tied.front()].k;
  report.rule = elbow_tied.size() == 1 ? "elbow" : "smallest k";
  return report;
}

std::vector<std::vector<LabelCandidate>> label_clusters(const ClusterModel& model,
                                                        const TokenVectors& data, int top_n) {
  if (top_n < 1) throw Error(ErrorKind::contract, "top_n must be >= 1");
  std::vector<std::vector<LabelCandidate>> out(static_cast<std::size_t>(model.k));
  for (std::size_t i = 0; i < model.assignment.size(); ++i) {
    const int c = model.assignment[i];
    const double d = (data.vectors.row(static_cast<Index>(i)) - model.centroids.row(c)).norm();
    out[c].push_back({model.tokens[i], d});
  }
  for (auto& list : out) {
    std::sort(list.begin(), list.end(), [](const LabelCandidate& a, const LabelCandidate& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.token < b.token;
    });
    if (list.size() > static_cast<std::size_t>(top_n)) list.resize(static_cast<std::size_t>(top_n));
  }
  return out;
}

std::string write_assignment_csv(const ClusterModel& model, const TokenVectors& data) {
  std::string out = "token,cluster_index,distance_to_centroid\n";
  for (std::size_t i = 0; i < model.tokens.size(); ++i) {
    const int c = model.assignment[i];
    const double d = (data.vectors.row(static_cast<Index>(i)) - model.centroids.row(c)).norm();
    out += csv_escape(model.tokens[i]) + ',' + std::to_string(c) + ',' + format_double(d) + '\n';
  }
  return out;
}

namespace {

int parse_index(const std::string& text, std::size_t line) {
  int v = -1;
  const auto t = trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || v < 0) {
    throw ParseError("bad cluster index '" + text + "'", line);
  }
  return v;
}

}  // namespace

ClusterAssignment read_assignment_csv(std::string_view csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty() || rows[0].fields.size() < 2 || rows[0].fields[0] != "token") {
    throw ParseError("expected header token,cluster_index,distance_to_centroid", 1);
  }
  ClusterAssignment out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].fields.size() != rows[0].fields.size()) throw ParseError("field count", rows[r].line);
    const int c = parse_index(rows[r].fields[1], rows[r].line);
    if (!out.cluster_of.emplace(rows[r].fields[0], c).second) {
      throw Error(ErrorKind::duplicate_key, "token '" + rows[r].fields[0] + "' assigned twice");
    }
    out.k = std::max(out.k, c + 1);
  }
  return out;
}

std::map<int, std::string> read_cluster_labels(std::string_view csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty() || rows[0].fields.size() != 2 || rows[0].fields[0] != "cluster_index") {
    throw ParseError("expected header cluster_index,label", 1);
  }
  std::map<int, std::string> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].fields.size() != 2) throw ParseError("expected 2 fields", rows[r].line);
    const int c = parse_index(rows[r].fields[0], rows[r].line);
    if (!out.emplace(c, std::string(trim(rows[r].fields[1]))).second) {
      throw Error(ErrorKind::duplicate_key, "cluster " + std::to_string(c) + " labeled twice");
    }
  }
  return out;
}

}  // namespace qsbias
