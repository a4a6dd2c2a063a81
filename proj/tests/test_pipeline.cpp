#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "qsbias/error.hpp"
#include "qsbias/pipeline.hpp"
#include "qsbias/util.hpp"

using namespace qsbias;
namespace fs = std::filesystem;

namespace {

const fs::path kMini = fs::path(QSBIAS_TEST_DATA) / "mini";

const std::vector<std::string> kArtifactNames = {
    "tokens.jsonl", "coverage.json",   "clusters.csv",      "cluster_model.json", "metrics.csv",
    "exclusions.csv", "group_summary.csv", "plot_data.json", "regression.csv",   "summary.txt"};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qsbias_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

PipelineConfig mini_config(const fs::path& out) {
  PipelineConfig c;
  c.paths.snapshots = kMini / "snapshots.jsonl";
  c.paths.registry = kMini / "subjects.csv";
  c.paths.lemmas = kMini / "lemmas.tsv";
  c.paths.gazetteer = kMini / "gazetteer.tsv";
  c.paths.stopwords = kMini / "stopwords.txt";
  c.paths.embeddings = kMini / "embeddings.txt";
  c.paths.output_dir = out;
  return c;
}

Subject person(const std::string& id, Gender g, int birth) {
  return Subject{id, "N " + id, g, birth, std::string("CDU"), std::string("Bayern")};
}

SubjectRegistry registry_of(std::vector<Subject> s) {
  return SubjectRegistry(std::move(s), Vocabularies{{"CDU"}, {"Bayern"}}, 2024);
}

MetricsTable one_cluster_table(std::vector<std::pair<std::string, double>> dcgs) {
  MetricsTable t;
  t.k = 1;
  for (const auto& [term, d] : dcgs) {
    TopicAffiliationProfile row;
    row.term_id = term;
    row.dcg = d;
    row.ndcg = d / 2;
    row.total_percentage = d / 4;
    t.rows.push_back(row);
    t.included_terms.push_back(term);
  }
  return t;
}

std::vector<ModelCell> table_two_cells() {
  std::vector<ModelCell> cells;
  for (MetricKind kind : {MetricKind::ndcg, MetricKind::dcg}) {
    for (int c = 0; c < 3; ++c) {
      ModelCell cell;
      cell.kind = kind;
      cell.cluster = c;
      RegressionResult r;
      const double scale = kind == MetricKind::dcg ? 1.0 : 0.1;
      r.coefficients = {{"(constant)", 2.24 * scale + c * 0.01, 0.1, 20.0, 0.0},
                        {"female", c == 2 ? -0.20 : 0.01 * (c + 1), 0.05, c == 2 ? -4.0 : 0.2, c == 2 ? 0.0 : 0.05},
                        {"age_decades", -0.03, 0.01, -3.0, 0.0031},
                        {"party=SPD", 0.004, 0.04, 0.1, 0.92}};
      r.adjusted_r2 = 0.01 * (c + 1);
      r.f_statistic = 2.5 + c;
      r.f_p = c == 0 ? 0.05 : 0.012;
      r.n = 100;
      r.p_params = 4;
      r.df_resid = 96;
      cell.result = r;
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace

TEST(Pipeline, MiniFixtureManifest) {
  const auto out = scratch("mini");
  const auto manifest = run_pipeline(mini_config(out));
  ASSERT_EQ(manifest.artifacts.size(), kArtifactNames.size());
  for (std::size_t i = 0; i < kArtifactNames.size(); ++i) {
    EXPECT_EQ(manifest.artifacts[i].name, kArtifactNames[i]);
    const std::string bytes = read_file(out / kArtifactNames[i]);
    EXPECT_EQ(manifest.artifacts[i].sha256, sha256_hex(bytes));
    EXPECT_EQ(manifest.artifacts[i].bytes, bytes.size());
  }
  // Every file in the directory besides the manifest is listed.
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    const auto name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    ++files;
    EXPECT_NE(std::find(kArtifactNames.begin(), kArtifactNames.end(), name), kArtifactNames.end()) << name;
  }
  EXPECT_EQ(files, kArtifactNames.size());

  const auto j = nlohmann::json::parse(read_file(manifest.path));
  EXPECT_GT(j["stages"]["metrics"]["included_terms"].get<int>(), 0);
  EXPECT_EQ(j["stages"]["preprocess"]["suggestions"], 500);
  EXPECT_EQ(j["inputs"]["registry"]["sha256"], sha256_hex(read_file(kMini / "subjects.csv")));
  EXPECT_EQ(j["config"]["min_cluster_words"], 10);
  fs::remove_all(out);
}

TEST(Pipeline, RepeatedRunsAreByteIdentical) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto ma = run_pipeline(mini_config(a));
  const auto mb = run_pipeline(mini_config(b));
  ASSERT_EQ(ma.artifacts.size(), mb.artifacts.size());
  for (std::size_t i = 0; i < ma.artifacts.size(); ++i) EXPECT_EQ(ma.artifacts[i].sha256, mb.artifacts[i].sha256);
  const auto again = run_pipeline(mini_config(a));
  for (std::size_t i = 0; i < ma.artifacts.size(); ++i) EXPECT_EQ(ma.artifacts[i].sha256, again.artifacts[i].sha256);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, ForcedEmptinessFailsInStats) {
  const auto out = scratch("empty");
  auto config = mini_config(out);
  config.min_cluster_words = 1000000;
  try {
    run_pipeline(config);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "stats");
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
    EXPECT_NE(std::string(e.what()).find("stats"), std::string::npos);
  }
  // Earlier stages keep their output, marked partial.
  EXPECT_TRUE(fs::exists(out / "metrics.csv.partial"));
  EXPECT_TRUE(fs::exists(out / "tokens.jsonl.partial"));
  EXPECT_FALSE(fs::exists(out / "metrics.csv"));
  EXPECT_FALSE(fs::exists(out / "manifest.json"));
  EXPECT_FALSE(fs::exists(out / ".qsbias.lock"));
  fs::remove_all(out);
}

TEST(Pipeline, LockfileRejectsConcurrentRun) {
  const auto out = scratch("lock");
  fs::create_directories(out);
  std::ofstream(out / ".qsbias.lock") << "1\n";
  try {
    run_pipeline(mini_config(out));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::storage);
  }
  fs::remove_all(out);
}

TEST(Pipeline, MissingInputIsLoadStageError) {
  const auto out = scratch("missing");
  auto config = mini_config(out);
  config.paths.embeddings = kMini / "nope.txt";
  try {
    run_pipeline(config);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "load");
  }
  fs::remove_all(out);
}

TEST(Pipeline, ConfigValidation) {
  auto c = mini_config(scratch("cfg"));
  c.alpha = 1.5;
  EXPECT_THROW(validate_config(c), Error);
  c = mini_config(scratch("cfg"));
  c.k_min = 5;
  c.k_max = 3;
  try {
    validate_config(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
  c = mini_config(scratch("cfg"));
  c.min_cluster_words = -1;
  EXPECT_THROW(validate_config(c), Error);
}

TEST(Pipeline, FixedKIsRespected) {
  auto config = mini_config({});
  config.k = 3;
  const auto result = analyze(load_inputs(config), config);
  EXPECT_EQ(result.clusters.model.k, 3);
  EXPECT_FALSE(result.clusters.selection);
  EXPECT_EQ(result.stats.cells.size(), 6u);
  for (const auto& row : result.metrics.rows) {
    EXPECT_GE(row.dcg, 0.0);
    EXPECT_LE(row.dcg, 4.5437);
  }
}

TEST(Summaries, MeanOfTwoSubjects) {
  const auto reg = registry_of({person("p1", Gender::female, 1970), person("p2", Gender::female, 1990)});
  const auto table = one_cluster_table({{"p1", 0.4}, {"p2", 0.6}});
  const auto s = summarize_groups(table, reg, Attribute::gender, GroupBins{40, 2021});
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_EQ(s.rows[0].group, "female");
  EXPECT_EQ(s.rows[0].n, 2u);
  EXPECT_DOUBLE_EQ(s.rows[0].mean_dcg, 0.5);
  EXPECT_DOUBLE_EQ(s.rows[0].mean_ndcg, 0.25);
}

TEST(Summaries, AgeSplitIsInclusiveAbove) {
  const auto reg = registry_of({person("p1", Gender::male, 1981), person("p2", Gender::male, 1982)});
  const auto table = one_cluster_table({{"p1", 1.0}, {"p2", 3.0}});
  const auto s = summarize_groups(table, reg, "age", GroupBins{40, 2021});
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_EQ(s.rows[0].group, "<40");
  EXPECT_EQ(s.rows[0].mean_dcg, 3.0);
  EXPECT_EQ(s.rows[1].group, ">=40");
  EXPECT_EQ(s.rows[1].mean_dcg, 1.0);
  try {
    summarize_groups(table, reg, "height", GroupBins{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
}

TEST(Summaries, GroupSizesMatchCountingOracle) {
  const auto config = mini_config({});
  const auto result = analyze(load_inputs(config), config);
  // Oracle: gender column of the fixture CSV, counted directly.
  std::map<std::string, std::string> gender_of;
  std::istringstream in(read_file(kMini / "subjects.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    gender_of[fields[0]] = fields[2];
  }
  std::map<std::string, std::size_t> expected;
  for (const auto& term : result.metrics.included_terms) ++expected[gender_of.at(term)];

  const auto& gender = result.summaries[0];
  ASSERT_EQ(gender.attribute, Attribute::gender);
  std::size_t total = 0;
  for (const auto& row : gender.rows) {
    EXPECT_EQ(row.n, expected.at(row.group)) << row.group;
    if (row.cluster == 0) total += row.n;
  }
  EXPECT_EQ(total, result.metrics.included_terms.size());
}

TEST(Report, SignificanceFlagsFollowStrictRule) {
  const auto cells = table_two_cells();
  PipelineConfig config;
  const auto files = emit_report(cells, {}, 3, config, {});
  const auto& csv = files.at("regression.csv");
  EXPECT_NE(csv.find("dcg,2,female,-0.2,0.05,-4,0,true"), std::string::npos);
  EXPECT_NE(csv.find("dcg,0,female,0.01,0.05,0.2,0.05,false"), std::string::npos);
  EXPECT_NE(csv.find("dcg,0,Model,,,,,false,0.01,2.5,0.05"), std::string::npos);
}

TEST(Report, EmptyInputsGiveValidFiles) {
  PipelineConfig config;
  const auto files = emit_report({}, {}, 0, config, {});
  ASSERT_EQ(files.size(), 4u);
  EXPECT_EQ(files.at("regression.csv"),
            "metric_kind,cluster_index,column_name,B,SE,t,P,significant,adjusted_r2,F,F_p\n");
  EXPECT_EQ(files.at("group_summary.csv"),
            "attribute,group,cluster_index,n,mean_dcg,mean_ndcg,mean_total_percentage\n");
  const auto plot = nlohmann::json::parse(files.at("plot_data.json"));
  EXPECT_TRUE(plot["clusters"].empty());
  EXPECT_TRUE(plot["panels"].empty());
  EXPECT_NE(files.at("summary.txt").find("No models were fitted."), std::string::npos);
}

TEST(Report, PlotDataMirrorsSummaries) {
  const auto reg = registry_of({person("p1", Gender::female, 1970), person("p2", Gender::male, 1990)});
  const auto table = one_cluster_table({{"p1", 0.4}, {"p2", 0.6}});
  const std::vector<GroupSummary> summaries = {summarize_groups(table, reg, Attribute::gender, GroupBins{40, 2021})};
  const auto plot = nlohmann::json::parse(write_plot_data_json(summaries, 1, {{0, "Politics"}}));
  EXPECT_EQ(plot["clusters"][0]["label"], "Politics");
  bool found = false;
  for (const auto& panel : plot["panels"]) {
    if (panel["metric"] != "dcg") continue;
    for (const auto& series : panel["series"]) {
      if (series["group"] == "female") {
        EXPECT_EQ(series["values"][0], 0.4);
        found = true;
      }
    }
  }
  EXPECT_TRUE(found);
}

TEST(Report, SummaryTextIsByteStable) {
  const auto cells = table_two_cells();
  const std::map<int, std::string> labels = {{0, "Personal"}, {1, "Places"}, {2, "Politics and Economics"}};
  const std::string text = write_summary_text(cells, 3, 0.05, labels);
  EXPECT_EQ(text, write_summary_text(cells, 3, 0.05, labels));
  const std::string golden = read_file(fs::path(QSBIAS_TEST_DATA) / "golden_summary.txt");
  EXPECT_EQ(text, golden);
}
