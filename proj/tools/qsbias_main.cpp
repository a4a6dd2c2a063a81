#include <CLI11.hpp>
#include <iostream>

#include "qsbias/error.hpp"
#include "qsbias/pipeline.hpp"
#include "qsbias/synth.hpp"
#include "qsbias/util.hpp"

using namespace qsbias;

namespace {

struct Options {
  PipelineConfig config;
  std::optional<int> k;
  std::optional<int> reference_year;
  std::string percentage_mode = "within_rank";
  std::vector<std::string> metric_kinds = {"ndcg", "dcg"};
  std::vector<std::string> party_merge;
  std::string engine;
  std::string from;
  std::string to;
  bool no_normalize = false;
};

void add_cluster_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--k", o.k, "Fixed number of clusters");
  cmd->add_option("--k-min", o.config.k_min, "Smallest k tried");
  cmd->add_option("--k-max", o.config.k_max, "Largest k tried");
  cmd->add_option("--seed", o.config.seed, "Random seed");
  cmd->add_option("--restarts", o.config.kmeans.restarts, "k-means restarts");
  cmd->add_flag("--no-normalize", o.no_normalize, "Keep raw embedding lengths");
}

void add_metrics_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--min-cluster-words", o.config.min_cluster_words, "Distinct clustered tokens a term needs");
  cmd->add_option("--percentage-mode", o.percentage_mode, "within_rank or across_ranks");
  cmd->add_option("--engine", o.engine, "Only this engine's suggestions");
  cmd->add_option("--from", o.from, "Earliest snapshot timestamp (RFC 3339)");
  cmd->add_option("--to", o.to, "Latest snapshot timestamp (RFC 3339)");
}

void add_stats_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--alpha", o.config.alpha, "Significance level");
  cmd->add_option("--base-gender", o.config.base_gender, "Reference gender");
  cmd->add_option("--base-party", o.config.base_party, "Reference party");
  cmd->add_option("--base-state", o.config.base_state, "Reference state");
  cmd->add_option("--age-bin-width", o.config.age_bin_width, "Years per age unit");
  cmd->add_option("--age-split", o.config.age_split, "Age threshold for group summaries");
  cmd->add_option("--reference-year", o.reference_year, "Year ages are measured at");
  cmd->add_option("--metric-kinds", o.metric_kinds, "ndcg, dcg, total_percentage")->delimiter(',');
  cmd->add_option("--party-merge", o.party_merge, "FROM=TO party relabeling")->delimiter(',');
}

void finish(Options& o) {
  auto& c = o.config;
  c.k = o.k;
  c.reference_year = o.reference_year;
  c.normalize = !o.no_normalize;
  const auto mode = parse_percentage_mode(o.percentage_mode);
  if (!mode) throw Error(ErrorKind::configuration, "unknown percentage mode '" + o.percentage_mode + "'");
  c.percentage_mode = *mode;
  c.metric_kinds.clear();
  for (const auto& name : o.metric_kinds) {
    const auto kind = parse_metric_kind(name);
    if (!kind) throw Error(ErrorKind::configuration, "unknown metric kind '" + name + "'");
    c.metric_kinds.push_back(*kind);
  }
  for (const auto& entry : o.party_merge) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::configuration, "party merge needs FROM=TO: " + entry);
    c.party_merge[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  if (!o.engine.empty()) {
    c.window.engine = parse_engine(o.engine);
    if (!c.window.engine) throw Error(ErrorKind::configuration, "unknown engine '" + o.engine + "'");
  }
  auto ts = [](const std::string& text) -> std::optional<Timestamp> {
    if (text.empty()) return std::nullopt;
    const auto t = parse_rfc3339(text);
    if (!t) throw Error(ErrorKind::configuration, "bad timestamp '" + text + "'");
    return t;
  };
  c.window.from = ts(o.from);
  c.window.to = ts(o.to);
  validate_config(c);
}

void write_into(const std::filesystem::path& dir, const std::string& name, const std::string& contents) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::storage, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / name, contents);
}

int crawl(const PipelineConfig& config, const std::vector<std::string>& engine_names, const std::string& out) {
  const auto registry = parse_subject_registry(read_file(config.paths.registry));
  const EndpointTable endpoints =
      config.paths.endpoints.empty() ? default_endpoints() : parse_endpoint_config(read_file(config.paths.endpoints));
  std::vector<Engine> engines;
  for (const auto& name : engine_names) {
    const auto e = parse_engine(name);
    if (!e || !endpoints.contains(*e)) throw Error(ErrorKind::configuration, "no endpoint for engine '" + name + "'");
    engines.push_back(*e);
  }
  RateLimiter limiter(substream_seed(config.seed, "crawl"));
  std::vector<SuggestionSnapshot> fetched;
  std::size_t failures = 0;
  for (const auto& s : registry.subjects()) {
    for (Engine e : engines) {
      try {
        fetched.push_back(fetch_suggestions(e, s.term_id, s.display_name, config.language, endpoints.at(e), &limiter));
      } catch (const Error& err) {
        ++failures;
        std::cerr << s.term_id << " " << to_string(e) << ": " << err.what() << "\n";
      }
    }
  }
  append_snapshots(out, fetched);
  std::cerr << "fetched " << fetched.size() << " snapshots, " << failures << " failed\n";
  return failures == 0 ? 0 : exit_code_for(ErrorKind::fetch);
}

GroupBins bins_for(const PipelineConfig& c) { return {c.age_split, c.reference_year.value_or(current_utc_year())}; }

std::vector<GroupSummary> all_summaries(const MetricsTable& metrics, const SubjectRegistry& registry,
                                        const PipelineConfig& c) {
  std::vector<GroupSummary> out;
  for (Attribute a : {Attribute::gender, Attribute::age, Attribute::party, Attribute::state}) {
    out.push_back(summarize_groups(metrics, registry, a, bins_for(c)));
  }
  return out;
}

GroupBias parse_bias(const std::string& text) {
  // attribute:group:topic:rate_multiplier:rank_shift
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t pos; (pos = text.find(':', start)) != std::string::npos; start = pos + 1) {
    parts.push_back(text.substr(start, pos - start));
  }
  parts.push_back(text.substr(start));
  if (parts.size() != 5) throw Error(ErrorKind::configuration, "bias needs attribute:group:topic:rate:shift");
  GroupBias b;
  const auto a = parse_attribute(parts[0]);
  if (!a) throw Error(ErrorKind::configuration, "unknown attribute '" + parts[0] + "'");
  b.attribute = *a;
  b.group = parts[1];
  b.topic = parts[2];
  try {
    b.rate_multiplier = std::stod(parts[3]);
    b.rank_shift = std::stod(parts[4]);
  } catch (const std::exception&) {
    throw Error(ErrorKind::configuration, "bias rate and shift must be numbers: " + text);
  }
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topical bias analysis of search query suggestions"};
  app.require_subcommand(1);
  Options o;
  auto& paths = o.config.paths;

  std::vector<std::string> engines = {"google", "duckduckgo", "bing"};
  std::string crawl_out;
  auto* crawl_cmd = app.add_subcommand("crawl", "Fetch suggestions for every subject and append them");
  crawl_cmd->add_option("--registry", paths.registry, "Subject registry CSV")->required();
  crawl_cmd->add_option("--out", crawl_out, "Snapshot JSONL to append to")->required();
  crawl_cmd->add_option("--engines", engines, "Engines to query")->delimiter(',');
  crawl_cmd->add_option("--endpoints", paths.endpoints, "Endpoint configuration JSON");
  crawl_cmd->add_option("--language", o.config.language, "Language tag");
  crawl_cmd->add_option("--seed", o.config.seed, "Seed for request jitter");

  std::string tokens_path;
  auto* pre_cmd = app.add_subcommand("preprocess", "Reduce suggestions to single tokens");
  pre_cmd->add_option("--snapshots", paths.snapshots, "Snapshot JSONL")->required();
  pre_cmd->add_option("--registry", paths.registry, "Subject registry CSV")->required();
  pre_cmd->add_option("--lemmas", paths.lemmas, "Lemma table TSV");
  pre_cmd->add_option("--gazetteer", paths.gazetteer, "Gazetteer TSV");
  pre_cmd->add_option("--stopwords", paths.stopwords, "Stopword list");
  pre_cmd->add_option("--out", tokens_path, "Token JSONL to write")->required();

  std::filesystem::path out_dir;
  int top_n = 10;
  auto* cluster_cmd = app.add_subcommand("cluster", "Embed tokens and cluster them into topics");
  cluster_cmd->add_option("--tokens", tokens_path, "Token JSONL")->required();
  cluster_cmd->add_option("--embeddings", paths.embeddings, "Word vectors (text or binary)")->required();
  cluster_cmd->add_option("--out-dir", out_dir, "Directory for cluster artifacts")->required();
  cluster_cmd->add_option("--top-n", top_n, "Label candidates printed per cluster");
  add_cluster_options(cluster_cmd, o);

  std::filesystem::path clusters_path;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute DCG, nDCG and total percentages");
  metrics_cmd->add_option("--tokens", tokens_path, "Token JSONL")->required();
  metrics_cmd->add_option("--clusters", clusters_path, "clusters.csv from the cluster step")->required();
  metrics_cmd->add_option("--out-dir", out_dir, "Directory for metrics artifacts")->required();
  add_metrics_options(metrics_cmd, o);

  std::filesystem::path metrics_path;
  std::filesystem::path regress_out;
  auto* regress_cmd = app.add_subcommand("regress", "Regress metrics on subject attributes");
  regress_cmd->add_option("--metrics", metrics_path, "metrics.csv")->required();
  regress_cmd->add_option("--registry", paths.registry, "Subject registry CSV")->required();
  regress_cmd->add_option("--out", regress_out, "Regression CSV to write")->required();
  add_stats_options(regress_cmd, o);

  auto* report_cmd = app.add_subcommand("report", "Write regression, group summaries, plot data and summary");
  report_cmd->add_option("--metrics", metrics_path, "metrics.csv")->required();
  report_cmd->add_option("--registry", paths.registry, "Subject registry CSV")->required();
  report_cmd->add_option("--labels", paths.labels, "cluster_index,label CSV");
  report_cmd->add_option("--out-dir", out_dir, "Directory for report files")->required();
  add_stats_options(report_cmd, o);

  auto* run_cmd = app.add_subcommand("run", "Run every stage and write a manifest");
  run_cmd->add_option("--snapshots", paths.snapshots, "Snapshot JSONL")->required();
  run_cmd->add_option("--registry", paths.registry, "Subject registry CSV")->required();
  run_cmd->add_option("--lemmas", paths.lemmas, "Lemma table TSV");
  run_cmd->add_option("--gazetteer", paths.gazetteer, "Gazetteer TSV");
  run_cmd->add_option("--stopwords", paths.stopwords, "Stopword list");
  run_cmd->add_option("--embeddings", paths.embeddings, "Word vectors (text or binary)")->required();
  run_cmd->add_option("--labels", paths.labels, "cluster_index,label CSV");
  run_cmd->add_option("--out-dir", paths.output_dir, "Output directory")->required();
  add_cluster_options(run_cmd, o);
  add_metrics_options(run_cmd, o);
  add_stats_options(run_cmd, o);

  SynthSpec spec;
  std::vector<std::string> biases;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with injected bias");
  synth_cmd->add_option("--out-dir", out_dir, "Directory for the corpus")->required();
  synth_cmd->add_option("--n-subjects", spec.n_subjects, "Number of subjects");
  synth_cmd->add_option("--snapshots-per-subject", spec.snapshots_per_subject, "Snapshots per subject");
  synth_cmd->add_option("--seed", spec.seed, "Random seed");
  synth_cmd->add_option("--heterogeneity", spec.subject_heterogeneity, "Per-subject topic mix spread");
  synth_cmd->add_option("--bias", biases, "attribute:group:topic:rate_multiplier:rank_shift (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorKind::configuration);
  }

  try {
    finish(o);
    const PipelineConfig& c = o.config;
    if (*crawl_cmd) return crawl(c, engines, crawl_out);
    if (*pre_cmd) {
      const auto registry = parse_subject_registry(read_file(paths.registry));
      const auto load = load_snapshots(paths.snapshots);
      for (const auto& issue : load.issues) std::cerr << "line " << issue.line << ": " << issue.message << "\n";
      PreprocessTables tables;
      if (!paths.lemmas.empty()) tables.lemmas = parse_lemma_table(read_file(paths.lemmas));
      if (!paths.gazetteer.empty()) tables.gazetteer = parse_gazetteer(read_file(paths.gazetteer));
      if (!paths.stopwords.empty()) tables.stopwords = parse_stopwords(read_file(paths.stopwords));
      const auto corpus = preprocess_corpus(load.snapshots, registry, tables);
      write_file(tokens_path, tokens_to_jsonl(corpus.tokens));
      std::cout << "suggestions " << corpus.report.input_count << ", kept " << corpus.report.kept_count
                << ", dropped " << corpus.report.dropped_count << " (" << format_fixed(100 * corpus.report.drop_rate(), 1)
                << "%)\n";
      return 0;
    }
    if (*cluster_cmd) {
      const auto tokens = tokens_from_jsonl(read_file(tokens_path));
      const auto store = parse_embedding_auto(read_file(paths.embeddings));
      const auto embedded = run_embed_stage(tokens, store, c);
      const auto stage = run_cluster_stage(embedded.rows, c);
      write_into(out_dir, "coverage.json", coverage_json(embedded.coverage));
      write_into(out_dir, "clusters.csv", write_assignment_csv(stage.model, embedded.rows));
      write_into(out_dir, "cluster_model.json", cluster_model_json(stage));
      const auto candidates = label_clusters(stage.model, embedded.rows, top_n);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::cout << "cluster " << i << ":";
        for (const auto& cand : candidates[i]) std::cout << " " << cand.token;
        std::cout << "\n";
      }
      return 0;
    }
    if (*metrics_cmd) {
      const auto tokens = select_tokens(tokens_from_jsonl(read_file(tokens_path)), c.window);
      const auto assignment = read_assignment_csv(read_file(clusters_path));
      const auto table = build_metrics_table(build_rank_matrix(tokens, assignment), assignment, c.min_cluster_words,
                                             c.percentage_mode);
      write_into(out_dir, "metrics.csv", write_metrics_csv(table));
      write_into(out_dir, "exclusions.csv", write_exclusions_csv(table));
      std::cout << "included terms " << table.included_terms.size() << ", excluded " << table.excluded_terms.size()
                << "\n";
      return 0;
    }
    if (*regress_cmd || *report_cmd) {
      const auto metrics = read_metrics_csv(read_file(metrics_path));
      const auto registry = parse_subject_registry(read_file(paths.registry));
      const int year = c.reference_year.value_or(current_utc_year());
      const auto stats = run_stats_stage(metrics, registry, c, year);
      if (*regress_cmd) {
        write_file(regress_out, write_regression_csv(stats.cells, c.alpha));
        return 0;
      }
      std::map<int, std::string> labels;
      if (!paths.labels.empty()) labels = read_cluster_labels(read_file(paths.labels));
      const auto summaries = all_summaries(metrics, registry, c);
      for (const auto& [name, contents] : emit_report(stats.cells, summaries, metrics.k, c, labels)) {
        write_into(out_dir, name, contents);
      }
      std::cout << read_file(out_dir / "summary.txt");
      return 0;
    }
    if (*run_cmd) {
      const auto manifest = run_pipeline(c);
      std::cout << manifest.path.string() << "\n";
      return 0;
    }
    if (*synth_cmd) {
      for (const auto& b : biases) spec.biases.push_back(parse_bias(b));
      write_synthetic(generate_synthetic(spec), out_dir);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::validation);
  }
  return 0;
}
