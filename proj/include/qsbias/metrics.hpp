#pragma once

// Term x rank frequency counts of clustered tokens and the rank-discounted
// topic affiliation metrics computed from them.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsbias/cluster.hpp"
#include "qsbias/corpus.hpp"
#include "qsbias/preprocess.hpp"

namespace qsbias {

// P(i) for ranks 1..10, stored at index i-1.
using RankProfile = std::array<double, kMaxRank>;

// Sum over ranks 1..10 of 1/log2(i+1); the largest possible DCG.
double max_dcg();

// Per term, per rank, clustered token -> number of appearances.
class RankFrequencyMatrix {
 public:
  using RankCounts = std::array<std::map<std::string, std::uint64_t, std::less<>>, kMaxRank>;

  void add(const std::string& term_id, int rank, const std::string& token, std::uint64_t count = 1);
  RankFrequencyMatrix& merge(const RankFrequencyMatrix& other);

  const RankCounts* find(std::string_view term_id) const;
  const std::map<std::string, RankCounts, std::less<>>& terms() const noexcept { return terms_; }
  bool empty() const noexcept { return terms_.empty(); }

  bool operator==(const RankFrequencyMatrix&) const = default;

 private:
  std::map<std::string, RankCounts, std::less<>> terms_;
};

// Counts pooled over every snapshot, engine and timestamp in `tokens`.
// Tokens without a cluster are skipped.
RankFrequencyMatrix build_rank_matrix(std::span<const TokenizedSuggestion> tokens,
                                      const ClusterAssignment& assignment);

// Restricts the token stream before pooling (per-engine or time-windowed
// analyses).
struct TokenWindow {
  std::optional<Engine> engine;
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // inclusive
};
std::vector<TokenizedSuggestion> select_tokens(std::span<const TokenizedSuggestion> tokens,
                                               const TokenWindow& window);

enum class PercentageMode {
  // Share of cluster x among all clustered appearances at rank i.
  within_rank,
  // Share of cluster x appearances that fall at rank i.
  across_ranks,
};
const char* to_string(PercentageMode m);
std::optional<PercentageMode> parse_percentage_mode(std::string_view text);

// Zero vector for an unknown term; 0/0 entries are 0.
RankProfile rank_percentages(const RankFrequencyMatrix& matrix, std::string_view term_id,
                             int cluster, const ClusterAssignment& assignment,
                             PercentageMode mode = PercentageMode::within_rank);

// sum_i (2^P(i) - 1) / log2(i + 1). Throws a domain error for entries
// outside [0, 1].
double dcg(const RankProfile& p);
// DCG of the profile sorted in descending order.
double ideal_dcg(const RankProfile& p);
// dcg / ideal_dcg, with 0 for an all-zero profile.
double ndcg(const RankProfile& p);

// Rank-blind share of cluster x among all clustered appearances of a term.
double total_percentage(const RankFrequencyMatrix& matrix, std::string_view term_id, int cluster,
                        const ClusterAssignment& assignment);

struct TopicAffiliationProfile {
  std::string term_id;
  int cluster = 0;
  RankProfile rank_percentages{};
  double dcg = 0.0;
  double ndcg = 0.0;
  double idcg = 0.0;
  double total_percentage = 0.0;
};

struct ExcludedTerm {
  std::string term_id;
  std::string reason;
};

struct MetricsTable {
  int k = 0;
  // Sorted by (term_id, cluster); one row per cluster for each included term.
  std::vector<TopicAffiliationProfile> rows;
  std::vector<std::string> included_terms;  // sorted
  std::vector<ExcludedTerm> excluded_terms;

  const TopicAffiliationProfile* find(std::string_view term_id, int cluster) const;
};

// A term is included when it has at least `min_cluster_words` distinct
// clustered tokens across all ranks.
MetricsTable build_metrics_table(const RankFrequencyMatrix& matrix,
                                 const ClusterAssignment& assignment, int min_cluster_words,
                                 PercentageMode mode = PercentageMode::within_rank);

// term_id,cluster_index,dcg,ndcg,total_percentage,p1..p10
std::string write_metrics_csv(const MetricsTable& table);
MetricsTable read_metrics_csv(std::string_view csv);
// term_id,reason
std::string write_exclusions_csv(const MetricsTable& table);

}  // namespace qsbias
