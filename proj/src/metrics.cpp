#include "qsbias/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>

#include "qsbias/error.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

namespace {

const std::array<double, kMaxRank>& discounts() {
  static const std::array<double, kMaxRank> table = [] {
    std::array<double, kMaxRank> t{};
    for (int i = 1; i <= kMaxRank; ++i) t[i - 1] = 1.0 / std::log2(static_cast<double>(i + 1));
    return t;
  }();
  return table;
}

void check_profile(const RankProfile& p) {
  for (int i = 0; i < kMaxRank; ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw Error(ErrorKind::domain, "P(" + std::to_string(i + 1) + ") = " + format_double(p[i]) +
                                         " outside [0, 1]");
    }
  }
}

double dcg_unchecked(const RankProfile& p) {
  const auto& disc = discounts();
  double sum = 0.0;
  for (int i = 0; i < kMaxRank; ++i) sum += (std::exp2(p[i]) - 1.0) * disc[i];
  return sum;
}

}  // namespace

double max_dcg() {
  double s = 0.0;
  for (double d : discounts()) s += d;
  return s;
}

void RankFrequencyMatrix::add(const std::string& term_id, int rank, const std::string& token,
                              std::uint64_t count) {
  if (rank < 1 || rank > kMaxRank) {
    throw Error(ErrorKind::contract, "rank " + std::to_string(rank) + " outside 1..10");
  }
  terms_[term_id][rank - 1][token] += count;
}

RankFrequencyMatrix& RankFrequencyMatrix::merge(const RankFrequencyMatrix& other) {
  for (const auto& [term, ranks] : other.terms_) {
    auto& mine = terms_[term];
    for (int r = 0; r < kMaxRank; ++r) {
      for (const auto& [token, n] : ranks[r]) mine[r][token] += n;
    }
  }
  return *this;
}

const RankFrequencyMatrix::RankCounts* RankFrequencyMatrix::find(std::string_view term_id) const {
  const auto it = terms_.find(term_id);
  return it == terms_.end() ? nullptr : &it->second;
}

RankFrequencyMatrix build_rank_matrix(std::span<const TokenizedSuggestion> tokens,
                                      const ClusterAssignment& assignment) {
  RankFrequencyMatrix m;
  for (const auto& t : tokens) {
    if (!assignment.cluster_of.contains(t.token)) continue;
    m.add(t.term_id, t.rank, t.token);
  }
  return m;
}

std::vector<TokenizedSuggestion> select_tokens(std::span<const TokenizedSuggestion> tokens,
                                               const TokenWindow& window) {
  std::vector<TokenizedSuggestion> out;
  for (const auto& t : tokens) {
    if (window.engine && t.engine != *window.engine) continue;
    if (window.from && t.timestamp < *window.from) continue;
    if (window.to && t.timestamp > *window.to) continue;
    out.push_back(t);
  }
  return out;
}

const char* to_string(PercentageMode m) {
  return m == PercentageMode::within_rank ? "within_rank" : "across_ranks";
}

std::optional<PercentageMode> parse_percentage_mode(std::string_view text) {
  if (text == "within_rank") return PercentageMode::within_rank;
  if (text == "across_ranks") return PercentageMode::across_ranks;
  return std::nullopt;
}

RankProfile rank_percentages(const RankFrequencyMatrix& matrix, std::string_view term_id,
                             int cluster, const ClusterAssignment& assignment,
                             PercentageMode mode) {
  RankProfile p{};
  const auto* ranks = matrix.find(term_id);
  if (!ranks) return p;
  std::array<std::uint64_t, kMaxRank> in_cluster{};
  std::array<std::uint64_t, kMaxRank> clustered{};
  for (int r = 0; r < kMaxRank; ++r) {
    for (const auto& [token, n] : (*ranks)[r]) {
      const auto it = assignment.cluster_of.find(token);
      if (it == assignment.cluster_of.end()) continue;
      clustered[r] += n;
      if (it->second == cluster) in_cluster[r] += n;
    }
  }
  if (mode == PercentageMode::within_rank) {
    for (int r = 0; r < kMaxRank; ++r) {
      p[r] = clustered[r] == 0 ? 0.0 : double(in_cluster[r]) / double(clustered[r]);
    }
  } else {
    std::uint64_t total = 0;
    for (auto n : in_cluster) total += n;
    for (int r = 0; r < kMaxRank; ++r) p[r] = total == 0 ? 0.0 : double(in_cluster[r]) / double(total);
  }
  return p;
}

double dcg(const RankProfile& p) {
  check_profile(p);
  return dcg_unchecked(p);
}

double ideal_dcg(const RankProfile& p) {
  check_profile(p);
  RankProfile sorted = p;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return dcg_unchecked(sorted);
}

double ndcg(const RankProfile& p) {
  const double ideal = ideal_dcg(p);
  if (ideal == 0.0) return 0.0;
  return std::min(1.0, dcg_unchecked(p) / ideal);
}

double total_percentage(const RankFrequencyMatrix& matrix, std::string_view term_id, int cluster,
                        const ClusterAssignment& assignment) {
  const auto* ranks = matrix.find(term_id);
  if (!ranks) return 0.0;
  std::uint64_t mine = 0, all = 0;
  for (const auto& rank : *ranks) {
    for (const auto& [token, n] : rank) {
      const auto it = assignment.cluster_of.find(token);
      if (it == assignment.cluster_of.end()) continue;
      all += n;
      if (it->second == cluster) mine += n;
    }
  }
  return all == 0 ? 0.0 : double(mine) / double(all);
}

const TopicAffiliationProfile* MetricsTable::find(std::string_view term_id, int cluster) const {
  const auto it = std::lower_bound(rows.begin(), rows.end(), std::make_pair(term_id, cluster),
                                   [](const TopicAffiliationProfile& row, const auto& key) {
                                     if (row.term_id != key.first) return row.term_id < key.first;
                                     return row.cluster < key.second;
                                   });
  if (it == rows.end() || it->term_id != term_id || it->cluster != cluster) return nullptr;
  return &*it;
}

MetricsTable build_metrics_table(const RankFrequencyMatrix& matrix,
                                 const ClusterAssignment& assignment, int min_cluster_words,
                                 PercentageMode mode) {
  if (min_cluster_words < 0) throw Error(ErrorKind::configuration, "min_cluster_words must be >= 0");
  MetricsTable table;
  table.k = assignment.k;
  for (const auto& [term, ranks] : matrix.terms()) {
    std::set<std::string_view> distinct;
    for (const auto& rank : ranks) {
      for (const auto& [token, n] : rank) {
        if (n > 0 && assignment.cluster_of.contains(token)) distinct.insert(token);
      }
    }
    if (distinct.size() < static_cast<std::size_t>(min_cluster_words)) {
      table.excluded_terms.push_back({term, "min_cluster_words"});
      continue;
    }
    table.included_terms.push_back(term);
    for (int c = 0; c < assignment.k; ++c) {
      TopicAffiliationProfile row;
      row.term_id = term;
      row.cluster = c;
      row.rank_percentages = rank_percentages(matrix, term, c, assignment, mode);
      row.dcg = dcg(row.rank_percentages);
      row.idcg = ideal_dcg(row.rank_percentages);
      row.ndcg = ndcg(row.rank_percentages);
      row.total_percentage = total_percentage(matrix, term, c, assignment);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::string write_metrics_csv(const MetricsTable& table) {
  std::string out = "term_id,cluster_index,dcg,ndcg,total_percentage";
  for (int i = 1; i <= kMaxRank; ++i) out += ",p" + std::to_string(i);
  out += '\n';
  for (const auto& r : table.rows) {
    out += csv_escape(r.term_id) + ',' + std::to_string(r.cluster) + ',' + format_double(r.dcg) +
           ',' + format_double(r.ndcg) + ',' + format_double(r.total_percentage);
    for (double p : r.rank_percentages) out += ',' + format_double(p);
    out += '\n';
  }
  return out;
}

MetricsTable read_metrics_csv(std::string_view csv) {
  const auto rows = parse_csv(csv);
  constexpr std::size_t width = 5 + kMaxRank;
  if (rows.empty() || rows[0].fields.size() != width || rows[0].fields[0] != "term_id") {
    throw ParseError("expected metrics header term_id,cluster_index,dcg,ndcg,total_percentage,p1..p10", 1);
  }
  auto number = [](const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      throw ParseError("bad number '" + s + "'", line);
    }
    return v;
  };
  MetricsTable table;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    if (f.size() != width) throw ParseError("field count", rows[r].line);
    TopicAffiliationProfile row;
    row.term_id = f[0];
    row.cluster = static_cast<int>(number(f[1], rows[r].line));
    row.dcg = number(f[2], rows[r].line);
    row.ndcg = number(f[3], rows[r].line);
    row.total_percentage = number(f[4], rows[r].line);
    for (int i = 0; i < kMaxRank; ++i) row.rank_percentages[i] = number(f[5 + i], rows[r].line);
    row.idcg = ideal_dcg(row.rank_percentages);
    table.k = std::max(table.k, row.cluster + 1);
    if (table.included_terms.empty() || table.included_terms.back() != row.term_id) {
      table.included_terms.push_back(row.term_id);
    }
    table.rows.push_back(std::move(row));
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.term_id, a.cluster) < std::tie(b.term_id, b.cluster);
  });
  std::sort(table.included_terms.begin(), table.included_terms.end());
  table.included_terms.erase(std::unique(table.included_terms.begin(), table.included_terms.end()),
                             table.included_terms.end());
  return table;
}

std::string write_exclusions_csv(const MetricsTable& table) {
  std::string out = "term_id,reason\n";
  for (const auto& e : table.excluded_terms) out += csv_escape(e.term_id) + ',' + e.reason + '\n';
  return out;
}

}  // namespace qsbias
