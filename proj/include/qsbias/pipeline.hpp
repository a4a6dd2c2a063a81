#pragma once

// End-to-end orchestration: loading inputs, the analysis stages, group
// summaries, report rendering and the on-disk run with its manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qsbias/cluster.hpp"
#include "qsbias/corpus.hpp"
#include "qsbias/embed.hpp"
#include "qsbias/metrics.hpp"
#include "qsbias/preprocess.hpp"
#include "qsbias/stats.hpp"

namespace qsbias {

struct PipelinePaths {
  std::filesystem::path snapshots;
  std::filesystem::path registry;
  std::filesystem::path lemmas;     // optional
  std::filesystem::path gazetteer;  // optional
  std::filesystem::path stopwords;  // optional
  std::filesystem::path embeddings;
  std::filesystem::path output_dir;
  std::filesystem::path endpoints;  // optional, crawl only
  std::filesystem::path labels;     // optional cluster_index,label CSV
};

struct PipelineConfig {
  PipelinePaths paths;
  std::string language = "de-DE";
  std::optional<int> k;  // fixed k; otherwise chosen in [k_min, k_max]
  int k_min = 2;
  int k_max = 6;
  std::uint64_t seed = 42;
  int min_cluster_words = 10;
  std::string base_gender = "male";
  std::string base_party = "CDU";
  std::string base_state = "Baden-Württemberg";
  double alpha = 0.05;
  int age_bin_width = 10;
  int age_split = 40;
  PercentageMode percentage_mode = PercentageMode::within_rank;
  // Year ages are measured at; defaults to the latest snapshot year.
  std::optional<int> reference_year;
  bool normalize = true;
  KMeansOptions kmeans;
  std::vector<MetricKind> metric_kinds = {MetricKind::ndcg, MetricKind::dcg};
  TokenWindow window;
  std::map<std::string, std::string> party_merge;
};

// Throws a configuration error for out-of-range settings.
void validate_config(const PipelineConfig& config);

struct PipelineInputs {
  SubjectRegistry registry;
  std::vector<SuggestionSnapshot> snapshots;
  std::size_t snapshot_issues = 0;  // skipped invalid lines
  PreprocessTables tables;
  EmbeddingStore embeddings;
  std::map<int, std::string> labels;
};

// Reads every configured input; failures are StageErrors named "load".
PipelineInputs load_inputs(const PipelineConfig& config);

// Throws insufficient_data when no token has an embedding.
EmbeddedTokens run_embed_stage(std::span<const TokenizedSuggestion> tokens,
                               const EmbeddingStore& store, const PipelineConfig& config);

struct ClusterStage {
  std::optional<KSelectionReport> selection;
  ClusterModel model;
};

// Fixed k, or k chosen over [k_min, k_max] capped by the distinct points.
ClusterStage run_cluster_stage(const TokenVectors& rows, const PipelineConfig& config);

struct StatsStage {
  int reference_year = 0;
  DesignMatrix design;
  std::vector<ModelCell> cells;
};

// Throws insufficient_data when no term survived the metrics stage.
StatsStage run_stats_stage(const MetricsTable& metrics, const SubjectRegistry& registry,
                           const PipelineConfig& config, int reference_year);

struct GroupRow {
  std::string group;
  int cluster = 0;
  std::size_t n = 0;
  double mean_dcg = 0.0;
  double mean_ndcg = 0.0;
  double mean_total_percentage = 0.0;
};

struct GroupSummary {
  Attribute attribute = Attribute::gender;
  std::vector<GroupRow> rows;  // sorted by (group, cluster)
};

struct GroupBins {
  int age_split = 40;  // groups "<split" and ">=split"
  int reference_year = 0;
};

// Means over included terms whose attribute is known.
GroupSummary summarize_groups(const MetricsTable& metrics, const SubjectRegistry& registry,
                              Attribute attribute, const GroupBins& bins);
// Same, with the attribute given by name; unknown names are configuration
// errors.
GroupSummary summarize_groups(const MetricsTable& metrics, const SubjectRegistry& registry,
                              std::string_view attribute, const GroupBins& bins);

std::string write_group_summary_csv(std::span<const GroupSummary> summaries);
std::string write_plot_data_json(std::span<const GroupSummary> summaries, int k,
                                 const std::map<int, std::string>& labels);
// Coefficient grid in the layout of a published regression table plus a
// list of significant findings.
std::string write_summary_text(std::span<const ModelCell> cells, int k, double alpha,
                               const std::map<int, std::string>& labels);

// Report files by name: regression.csv, group_summary.csv, plot_data.json,
// summary.txt.
std::map<std::string, std::string> emit_report(std::span<const ModelCell> cells,
                                               std::span<const GroupSummary> summaries, int k,
                                               const PipelineConfig& config,
                                               const std::map<int, std::string>& labels);

struct AnalysisResult {
  PreprocessedCorpus corpus;
  EmbeddedTokens embedded;
  ClusterStage clusters;
  ClusterAssignment assignment;
  MetricsTable metrics;
  StatsStage stats;
  std::vector<GroupSummary> summaries;
};

using StageHook = std::function<void(std::string_view stage, const AnalysisResult& partial)>;

// All stages in memory. Failures are StageErrors naming the stage
// (preprocess, embed, cluster, metrics, stats, report). `after_stage` runs
// after each stage completes.
AnalysisResult analyze(const PipelineInputs& inputs, const PipelineConfig& config,
                       const StageHook& after_stage = {});

std::string coverage_json(const EmbeddingCoverage& coverage);
std::string cluster_model_json(const ClusterStage& stage);
std::string config_json(const PipelineConfig& config);

struct ArtifactRecord {
  std::string name;
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  std::filesystem::path path;
  std::vector<ArtifactRecord> artifacts;
  std::string json;
};

// Writes every artifact into the output directory, then manifest.json.
// Artifacts are written with a ".partial" suffix and renamed once all stages
// succeed. A lockfile rejects concurrent runs against one directory.
RunManifest run_pipeline(const PipelineConfig& config);

}  // namespace qsbias
