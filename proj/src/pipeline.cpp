#include "qsbias/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <json.hpp>

#include "qsbias/util.hpp"

namespace qsbias {

namespace {

using nlohmann::ordered_json;

template <typename F>
auto in_stage(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

std::string optional_file(const std::filesystem::path& path) {
  return path.empty() ? std::string() : read_file(path);
}

int latest_snapshot_year(std::span<const SuggestionSnapshot> snapshots) {
  if (snapshots.empty()) return current_utc_year();
  Timestamp latest = snapshots.front().timestamp;
  for (const auto& s : snapshots) latest = std::max(latest, s.timestamp);
  return year_of(latest);
}

// Holds an exclusive lockfile for the lifetime of a run.
class DirectoryLock {
 public:
  explicit DirectoryLock(std::filesystem::path path) : path_(std::move(path)) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw Error(ErrorKind::storage, "output directory is locked by another run: " + path_.string());
      }
      throw Error(ErrorKind::storage, "cannot create lockfile " + path_.string() + ": " + std::strerror(errno));
    }
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

const std::vector<std::string> kArtifacts = {
    "tokens.jsonl",   "coverage.json",     "clusters.csv",   "cluster_model.json", "metrics.csv",
    "exclusions.csv", "regression.csv",    "group_summary.csv", "plot_data.json", "summary.txt"};

}  // namespace

void validate_config(const PipelineConfig& config) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::configuration, msg); };
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (config.min_cluster_words < 1) fail("min_cluster_words must be at least 1");
  if (config.k && *config.k < 2) fail("k must be at least 2");
  if (!config.k && (config.k_min < 2 || config.k_max < config.k_min)) fail("need 2 <= k_min <= k_max");
  if (config.age_bin_width < 1) fail("age_bin_width must be positive");
  if (config.reference_year && *config.reference_year <= 0) fail("reference_year must be positive");
  if (config.metric_kinds.empty()) fail("at least one metric kind is required");
  if (config.kmeans.restarts < 1 || config.kmeans.max_iter < 1 || !(config.kmeans.tol >= 0.0)) {
    fail("invalid k-means options");
  }
}

PipelineInputs load_inputs(const PipelineConfig& config) {
  return in_stage("load", [&] {
    PipelineInputs in;
    in.registry = parse_subject_registry(read_file(config.paths.registry));
    auto load = load_snapshots(config.paths.snapshots);
    in.snapshots = std::move(load.snapshots);
    in.snapshot_issues = load.issues.size();
    in.tables.lemmas = parse_lemma_table(optional_file(config.paths.lemmas));
    in.tables.gazetteer = parse_gazetteer(optional_file(config.paths.gazetteer));
    in.tables.stopwords = parse_stopwords(optional_file(config.paths.stopwords));
    in.embeddings = parse_embedding_auto(read_file(config.paths.embeddings));
    if (!config.paths.labels.empty()) in.labels = read_cluster_labels(read_file(config.paths.labels));
    return in;
  });
}

EmbeddedTokens run_embed_stage(std::span<const TokenizedSuggestion> tokens, const EmbeddingStore& store,
                               const PipelineConfig& config) {
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (const auto& t : tokens) words.push_back(t.token);
  auto embedded = embed_tokens(words, store, config.normalize);
  if (embedded.rows.tokens.empty()) {
    throw Error(ErrorKind::insufficient_data, "no token has an embedding");
  }
  return embedded;
}

ClusterStage run_cluster_stage(const TokenVectors& rows, const PipelineConfig& config) {
  const std::uint64_t seed = substream_seed(config.seed, "cluster");
  ClusterStage out;
  int k = 0;
  if (config.k) {
    k = *config.k;
  } else {
    const int distinct = static_cast<int>(count_distinct_rows(rows.vectors));
    const int k_max = std::min(config.k_max, distinct);
    if (k_max < config.k_min) {
      throw Error(ErrorKind::infeasible, "only " + std::to_string(distinct) + " distinct vectors for k >= " +
                                             std::to_string(config.k_min));
    }
    out.selection = select_k(rows, config.k_min, k_max, seed, config.kmeans);
    k = out.selection->chosen_k;
  }
  out.model = kmeans_best_of(rows, k, substream_seed(seed, static_cast<std::uint64_t>(k)), config.kmeans);
  return out;
}

StatsStage run_stats_stage(const MetricsTable& metrics, const SubjectRegistry& registry,
                           const PipelineConfig& config, int reference_year) {
  if (metrics.included_terms.empty()) {
    throw Error(ErrorKind::insufficient_data, "no term has at least " + std::to_string(config.min_cluster_words) +
                                                  " clustered words");
  }
  StatsStage out;
  out.reference_year = reference_year;
  DesignOptions options;
  options.base_gender = config.base_gender;
  options.base_party = config.base_party;
  options.base_state = config.base_state;
  options.age_bin_width = config.age_bin_width;
  options.reference_year = reference_year;
  options.party_merge = config.party_merge;
  out.design = encode_design(registry, metrics.included_terms, options);
  out.cells = regress_all(metrics, out.design, config.metric_kinds);
  return out;
}

AnalysisResult analyze(const PipelineInputs& inputs, const PipelineConfig& config, const StageHook& after_stage) {
  validate_config(config);
  AnalysisResult r;
  auto done = [&](std::string_view stage) {
    if (after_stage) after_stage(stage, r);
  };
  r.corpus = in_stage("preprocess", [&] { return preprocess_corpus(inputs.snapshots, inputs.registry, inputs.tables); });
  done("preprocess");
  const auto selected = select_tokens(r.corpus.tokens, config.window);
  r.embedded = in_stage("embed", [&] { return run_embed_stage(selected, inputs.embeddings, config); });
  done("embed");
  r.clusters = in_stage("cluster", [&] { return run_cluster_stage(r.embedded.rows, config); });
  r.assignment = ClusterAssignment::from_model(r.clusters.model);
  done("cluster");
  r.metrics = in_stage("metrics", [&] {
    const auto matrix = build_rank_matrix(selected, r.assignment);
    return build_metrics_table(matrix, r.assignment, config.min_cluster_words, config.percentage_mode);
  });
  done("metrics");
  const int year = config.reference_year.value_or(latest_snapshot_year(inputs.snapshots));
  r.stats = in_stage("stats", [&] { return run_stats_stage(r.metrics, inputs.registry, config, year); });
  done("stats");
  in_stage("report", [&] {
    const GroupBins bins{config.age_split, year};
    for (Attribute a : {Attribute::gender, Attribute::age, Attribute::party, Attribute::state}) {
      r.summaries.push_back(summarize_groups(r.metrics, inputs.registry, a, bins));
    }
    return 0;
  });
  done("report");
  return r;
}

std::string coverage_json(const EmbeddingCoverage& coverage) {
  ordered_json j;
  j["requested"] = coverage.requested;
  j["found"] = coverage.found;
  j["ratio"] = coverage.ratio();
  j["zero_vectors"] = coverage.zero_vectors;
  j["missing_tokens"] = coverage.missing_tokens;
  return j.dump(2) + "\n";
}

std::string cluster_model_json(const ClusterStage& stage) {
  const ClusterModel& m = stage.model;
  ordered_json j;
  j["k"] = m.k;
  j["seed"] = m.seed;
  j["inertia"] = m.inertia;
  j["iterations_run"] = m.iterations_run;
  j["inertia_history"] = m.inertia_history;
  ordered_json sizes = ordered_json::array();
  for (int c = 0; c < m.k; ++c) sizes.push_back(m.cluster_size(c));
  j["cluster_sizes"] = sizes;
  ordered_json centroids = ordered_json::array();
  for (Eigen::Index c = 0; c < m.centroids.rows(); ++c) {
    std::vector<double> row(m.centroids.cols());
    for (Eigen::Index d = 0; d < m.centroids.cols(); ++d) row[d] = m.centroids(c, d);
    centroids.push_back(row);
  }
  j["centroids"] = centroids;
  if (stage.selection) {
    ordered_json sel;
    sel["chosen_k"] = stage.selection->chosen_k;
    sel["rule"] = stage.selection->rule;
    sel["candidates"] = ordered_json::array();
    for (const auto& c : stage.selection->candidates) {
      sel["candidates"].push_back({{"k", c.k}, {"inertia", c.inertia}, {"silhouette", c.silhouette}});
    }
    j["selection"] = sel;
  } else {
    j["selection"] = nullptr;
  }
  return j.dump(2) + "\n";
}

std::string config_json(const PipelineConfig& config) {
  ordered_json j;
  const auto& p = config.paths;
  j["paths"] = {{"snapshots", p.snapshots.string()}, {"registry", p.registry.string()},
                {"lemmas", p.lemmas.string()},       {"gazetteer", p.gazetteer.string()},
                {"stopwords", p.stopwords.string()}, {"embeddings", p.embeddings.string()},
                {"labels", p.labels.string()}};
  j["language"] = config.language;
  j["k"] = config.k ? ordered_json(*config.k) : ordered_json(nullptr);
  j["k_min"] = config.k_min;
  j["k_max"] = config.k_max;
  j["seed"] = config.seed;
  j["min_cluster_words"] = config.min_cluster_words;
  j["base_categories"] = {{"gender", config.base_gender}, {"party", config.base_party}, {"state", config.base_state}};
  j["alpha"] = config.alpha;
  j["age_bin_width"] = config.age_bin_width;
  j["age_split"] = config.age_split;
  j["percentage_mode"] = to_string(config.percentage_mode);
  j["reference_year"] = config.reference_year ? ordered_json(*config.reference_year) : ordered_json(nullptr);
  j["normalize"] = config.normalize;
  j["kmeans"] = {{"max_iter", config.kmeans.max_iter}, {"tol", config.kmeans.tol}, {"restarts", config.kmeans.restarts}};
  ordered_json kinds = ordered_json::array();
  for (auto k : config.metric_kinds) kinds.push_back(to_string(k));
  j["metric_kinds"] = kinds;
  const auto& w = config.window;
  j["window"] = {{"engine", w.engine ? ordered_json(to_string(*w.engine)) : ordered_json(nullptr)},
                 {"from", w.from ? ordered_json(format_rfc3339(*w.from)) : ordered_json(nullptr)},
                 {"to", w.to ? ordered_json(format_rfc3339(*w.to)) : ordered_json(nullptr)}};
  j["party_merge"] = config.party_merge;
  return j.dump(2);
}

RunManifest run_pipeline(const PipelineConfig& config) {
  validate_config(config);
  const auto& dir = config.paths.output_dir;
  if (dir.empty()) throw Error(ErrorKind::configuration, "output directory is required");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::storage, "cannot create " + dir.string() + ": " + ec.message());
  DirectoryLock lock(dir / ".qsbias.lock");
  for (const auto& name : kArtifacts) {
    std::filesystem::remove(dir / name, ec);
    std::filesystem::remove(dir / (name + ".partial"), ec);
  }
  std::filesystem::remove(dir / "manifest.json", ec);

  const PipelineInputs inputs = load_inputs(config);
  std::vector<std::pair<std::string, std::string>> written;  // name, contents
  auto put = [&](const std::string& name, std::string contents) {
    write_file(dir / (name + ".partial"), contents);
    written.emplace_back(name, std::move(contents));
  };
  const AnalysisResult result = analyze(inputs, config, [&](std::string_view stage, const AnalysisResult& r) {
    if (stage == "preprocess") {
      put("tokens.jsonl", tokens_to_jsonl(r.corpus.tokens));
    } else if (stage == "embed") {
      put("coverage.json", coverage_json(r.embedded.coverage));
    } else if (stage == "cluster") {
      put("clusters.csv", write_assignment_csv(r.clusters.model, r.embedded.rows));
      put("cluster_model.json", cluster_model_json(r.clusters));
    } else if (stage == "metrics") {
      put("metrics.csv", write_metrics_csv(r.metrics));
      put("exclusions.csv", write_exclusions_csv(r.metrics));
    } else if (stage == "report") {
      for (auto& [name, contents] : emit_report(r.stats.cells, r.summaries, r.metrics.k, config, inputs.labels)) {
        put(name, std::move(contents));
      }
    }
  });

  RunManifest manifest;
  manifest.path = dir / "manifest.json";
  for (const auto& [name, contents] : written) {
    std::filesystem::rename(dir / (name + ".partial"), dir / name, ec);
    if (ec) throw Error(ErrorKind::storage, "cannot finalize " + name + ": " + ec.message());
    manifest.artifacts.push_back({name, sha256_hex(contents), contents.size()});
  }

  ordered_json j;
  j["config"] = ordered_json::parse(config_json(config));
  ordered_json in = ordered_json::object();
  auto digest_input = [&](const char* name, const std::filesystem::path& path) {
    if (path.empty()) return;
    const std::string bytes = read_file(path);
    in[name] = {{"path", path.string()}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}};
  };
  digest_input("snapshots", config.paths.snapshots);
  digest_input("registry", config.paths.registry);
  digest_input("lemmas", config.paths.lemmas);
  digest_input("gazetteer", config.paths.gazetteer);
  digest_input("stopwords", config.paths.stopwords);
  digest_input("embeddings", config.paths.embeddings);
  digest_input("labels", config.paths.labels);
  j["inputs"] = in;
  ordered_json arts = ordered_json::array();
  for (const auto& a : manifest.artifacts) arts.push_back({{"name", a.name}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  j["artifacts"] = arts;

  const auto& rep = result.corpus.report;
  std::size_t fitted = 0;
  for (const auto& c : result.stats.cells) fitted += c.result.has_value();
  j["stages"] = {
      {"load", {{"subjects", inputs.registry.size()}, {"snapshots", inputs.snapshots.size()}, {"invalid_lines", inputs.snapshot_issues}}},
      {"preprocess",
       {{"snapshots_processed", result.corpus.snapshots_processed},
        {"snapshots_without_subject", result.corpus.snapshots_without_subject},
        {"suggestions", rep.input_count},
        {"kept", rep.kept_count},
        {"dropped", rep.dropped_count},
        {"dropped_empty_after_clean", rep.drop_reasons.contains(DropReason::empty_after_clean) ? rep.drop_reasons.at(DropReason::empty_after_clean) : 0},
        {"dropped_multi_token", rep.drop_reasons.contains(DropReason::multi_token) ? rep.drop_reasons.at(DropReason::multi_token) : 0}}},
      {"embed", {{"requested", result.embedded.coverage.requested}, {"found", result.embedded.coverage.found}}},
      {"cluster", {{"k", result.clusters.model.k}, {"rule", result.clusters.selection ? result.clusters.selection->rule : "fixed"}, {"inertia", result.clusters.model.inertia}}},
      {"metrics", {{"included_terms", result.metrics.included_terms.size()}, {"excluded_terms", result.metrics.excluded_terms.size()}}},
      {"stats",
       {{"reference_year", result.stats.reference_year},
        {"design_rows", result.stats.design.row_term_ids.size()},
        {"design_dropped", result.stats.design.dropped.size()},
        {"models_fitted", fitted},
        {"models_failed", result.stats.cells.size() - fitted}}}};
  manifest.json = j.dump(2) + "\n";
  write_file(manifest.path, manifest.json);
  return manifest;
}

}  // namespace qsbias
