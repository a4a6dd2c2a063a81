#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <numeric>
#include <set>

#include "qsbias/cluster.hpp"
#include "qsbias/error.hpp"
#include "qsbias/synth.hpp"
#include "qsbias/util.hpp"
#include "synth_probe.hpp"

using namespace qsbias;

namespace {

// Exact expectation by enumerating all orderings of `items` weighted items
// among unit-weight others under sequential weighted draws.
double enumerated_mean_rank(double temperature, int items, int length) {
  const double w = std::exp(-temperature);
  std::vector<int> order(length);
  std::iota(order.begin(), order.end(), 0);
  double expectation = 0.0;
  do {
    double prob = 1.0;
    double remaining = items * w + (length - items);
    double rank_sum = 0.0;
    for (int pos = 0; pos < length; ++pos) {
      const bool marked = order[pos] < items;
      const double weight = marked ? w : 1.0;
      prob *= weight / remaining;
      remaining -= weight;
      if (marked) rank_sum += pos + 1;
    }
    expectation += prob * rank_sum / items;
  } while (std::next_permutation(order.begin(), order.end()));
  return expectation;
}

void expect_spec_error(const SynthSpec& spec) {
  try {
    generate_synthetic(spec);
    ADD_FAILURE() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::spec) << e.what();
  }
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.n_subjects = 60;
  s.snapshots_per_subject = 6;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Calibration, UnbiasedMeanRankIsMidList) {
  for (int items = 1; items <= 10; ++items) EXPECT_NEAR(expected_mean_rank(0.0, items, 10), 5.5, 1e-12);
}

TEST(Calibration, DynamicProgramMatchesEnumeration) {
  for (int length : {4, 6}) {
    for (int items = 1; items < length; ++items) {
      for (double temp : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
        EXPECT_NEAR(expected_mean_rank(temp, items, length), enumerated_mean_rank(temp, items, length), 1e-12)
            << length << " " << items << " " << temp;
      }
    }
  }
}

TEST(Calibration, DynamicProgramMatchesMonteCarlo) {
  Rng rng(77);
  const double temp = 0.8;
  const int items = 3;
  const double w = std::exp(-temp);
  double total = 0.0;
  const int trials = 200000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> weights(10, 1.0);
    for (int i = 0; i < items; ++i) weights[i] = w;
    double rank_sum = 0.0;
    for (int pos = 1; pos <= 10; ++pos) {
      const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
      double u = rng.uniform() * sum;
      std::size_t pick = 0;
      while (pick + 1 < weights.size() && u >= weights[pick]) u -= weights[pick++];
      if (pick < static_cast<std::size_t>(items) && weights[pick] > 0) rank_sum += pos;
      weights[pick] = 0.0;
    }
    total += rank_sum / items;
  }
  EXPECT_NEAR(expected_mean_rank(temp, items, 10), total / trials, 0.01);
}

TEST(Calibration, RealizedShiftMatchesTarget) {
  for (int items : {2, 3, 5}) {
    for (double shift : {-1.5, -0.5, 0.25, 1.0, 2.0}) {
      const double temp = calibrate_rank_temperature(shift, items, 10);
      EXPECT_NEAR(expected_mean_rank(temp, items, 10) - 5.5, shift, 1e-6);
      EXPECT_EQ(temp > 0, shift > 0);
    }
  }
  EXPECT_EQ(calibrate_rank_temperature(0.0, 3, 10), 0.0);
}

TEST(Calibration, UnattainableShiftIsSpecError) {
  try {
    calibrate_rank_temperature(4.0, 5, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::spec);
  }
  EXPECT_THROW(calibrate_rank_temperature(1.0, 10, 10), Error);
}

TEST(SpecValidation, InfeasibleSpecs) {
  auto marginals = small_spec(1);
  marginals.gender_marginals = {{"female", 0.5}, {"male", 0.6}};
  expect_spec_error(marginals);

  auto overlap = small_spec(1);
  overlap.topics = default_topics();
  overlap.topics[1].tokens[0] = overlap.topics[0].tokens[0];
  expect_spec_error(overlap);

  auto tiny = small_spec(1);
  tiny.topics = default_topics(5);
  expect_spec_error(tiny);

  auto rate = small_spec(1);
  rate.biases = {{Attribute::gender, "female", "politics", 0.0, 0.0}};
  expect_spec_error(rate);

  auto topic = small_spec(1);
  topic.biases = {{Attribute::gender, "female", "sports", 1.0, 0.0}};
  expect_spec_error(topic);

  auto group = small_spec(1);
  group.biases = {{Attribute::party, "PIRATEN", "politics", 1.0, 0.0}};
  expect_spec_error(group);

  auto age = small_spec(1);
  age.biases = {{Attribute::age, "40", "politics", 1.0, 0.0}};
  expect_spec_error(age);

  auto shift = small_spec(1);
  shift.biases = {{Attribute::gender, "female", "politics", 1.0, 9.0}};
  expect_spec_error(shift);

  auto dim = small_spec(1);
  dim.embedding_dimension = 2;
  expect_spec_error(dim);
}

TEST(Generate, ShapeAndVocabulary) {
  const auto corpus = generate_synthetic(small_spec(3));
  EXPECT_EQ(corpus.registry.size(), 60u);
  EXPECT_EQ(corpus.snapshots.size(), 360u);
  std::set<std::string> lexicon;
  for (const auto& t : corpus.topics) lexicon.insert(t.tokens.begin(), t.tokens.end());
  EXPECT_EQ(corpus.embeddings.size(), lexicon.size());
  for (const auto& s : corpus.snapshots) {
    EXPECT_LE(s.suggestions.size(), 10u);
    EXPECT_FALSE(snapshot_violation(s));
    EXPECT_TRUE(corpus.registry.find(s.term_id));
  }
  for (const auto& s : corpus.registry.subjects()) {
    EXPECT_TRUE(s.gender == Gender::male || s.gender == Gender::female);
    ASSERT_TRUE(s.birth_year);
    EXPECT_GE(2021 - *s.birth_year, 25);
    EXPECT_LE(2021 - *s.birth_year, 80);
  }
  const auto truth = nlohmann::json::parse(corpus.ground_truth_json);
  EXPECT_EQ(truth["n_subjects"], 60);
  EXPECT_EQ(truth["topics"].size(), 3u);
}

TEST(Generate, PreprocessingRecoversLexiconTokens) {
  const auto corpus = generate_synthetic(small_spec(4));
  const auto pre = preprocess_corpus(corpus.snapshots, corpus.registry, corpus.tables);
  std::set<std::string> lexicon;
  for (const auto& t : corpus.topics) lexicon.insert(t.tokens.begin(), t.tokens.end());
  std::size_t in_lexicon = 0;
  for (const auto& t : pre.tokens) in_lexicon += lexicon.contains(t.token);
  EXPECT_GT(static_cast<double>(in_lexicon), 0.95 * static_cast<double>(pre.tokens.size()));
  EXPECT_GT(pre.report.drop_rate(), 0.0);
}

TEST(Generate, DeterministicPerSeed) {
  const auto a = generate_synthetic(small_spec(5));
  const auto b = generate_synthetic(small_spec(5));
  const auto c = generate_synthetic(small_spec(6));
  EXPECT_EQ(a.snapshots, b.snapshots);
  EXPECT_EQ(write_subject_registry(a.registry), write_subject_registry(b.registry));
  EXPECT_EQ(a.ground_truth_json, b.ground_truth_json);
  EXPECT_NE(a.snapshots, c.snapshots);
}

TEST(Generate, MarginalsAreRespected) {
  SynthSpec spec = small_spec(7);
  spec.n_subjects = 2000;
  spec.snapshots_per_subject = 1;
  const auto corpus = generate_synthetic(spec);
  double female = 0;
  for (const auto& s : corpus.registry.subjects()) female += s.gender == Gender::female;
  EXPECT_NEAR(female / 2000.0, 0.34, 0.04);
}

TEST(Generate, RateMultiplierLowersTopicShare) {
  SynthSpec spec = small_spec(8);
  spec.n_subjects = 200;
  spec.biases = {{Attribute::gender, "female", "politics", 0.5, 0.0}};
  const auto corpus = generate_synthetic(spec);
  std::map<Gender, std::pair<double, double>> share;
  for (const auto& snap : corpus.snapshots) {
    const auto g = corpus.registry.find(snap.term_id)->gender;
    for (const auto& sug : snap.suggestions) {
      share[g].second += 1;
      share[g].first += sug.text.find("polt") != std::string::npos;
    }
  }
  const double f = share[Gender::female].first / share[Gender::female].second;
  const double m = share[Gender::male].first / share[Gender::male].second;
  EXPECT_LT(f, 0.8 * m);
}

TEST(Generate, WrittenFilesParseBack) {
  const auto corpus = generate_synthetic(small_spec(9));
  const auto dir = std::filesystem::temp_directory_path() / "qsbias_synth_test";
  std::filesystem::remove_all(dir);
  write_synthetic(corpus, dir);
  for (const char* f : {"subjects.csv", "snapshots.jsonl", "lemmas.tsv", "gazetteer.tsv", "stopwords.txt",
                        "embeddings.txt", "ground_truth.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(parse_subject_registry(read_file(dir / "subjects.csv")).size(), 60u);
  EXPECT_EQ(load_snapshots(dir / "snapshots.jsonl").snapshots, corpus.snapshots);
  EXPECT_EQ(parse_embedding_auto(read_file(dir / "embeddings.txt")).size(), corpus.embeddings.size());
  std::filesystem::remove_all(dir);
}

TEST(Generate, BlobEmbeddingsSelectTopicCount) {
  for (int topics : {3, 4}) {
    SynthSpec spec = small_spec(10);
    if (topics == 4) {
      spec.topics = default_topics();
      TopicLexicon extra{"sports", {}};
      for (int i = 0; i < 30; ++i) extra.tokens.push_back("sprt" + std::string(1, char('a' + i % 26)) + std::to_string(i));
      spec.topics.push_back(extra);
    }
    const auto corpus = generate_synthetic(spec);
    const auto embedded = embed_tokens(corpus.embeddings.tokens(), corpus.embeddings, true);
    EXPECT_EQ(select_k(embedded.rows, 2, 6, 5).chosen_k, topics);
  }
}

TEST(EndToEnd, InjectedBiasIsRecovered) {
  SynthSpec spec;
  spec.seed = 21;
  spec.biases = {{Attribute::gender, "female", "politics", 0.7, 1.0}};
  const auto corpus = generate_synthetic(spec);
  const auto result = analyze(probe::inputs_from(corpus), PipelineConfig{});
  ASSERT_EQ(result.clusters.model.k, 3);
  const int politics = probe::topic_cluster(result, corpus, "politics");
  ASSERT_GE(politics, 0);
  const auto* fit = probe::model(result, MetricKind::dcg, politics);
  ASSERT_TRUE(fit);
  EXPECT_LT(fit->find("female")->estimate, 0.0);
  EXPECT_LT(fit->find("female")->p, 0.01);
}

TEST(EndToEnd, NullCorpusRunsCleanly) {
  SynthSpec spec;
  spec.n_subjects = 150;
  spec.seed = 22;
  const auto corpus = generate_synthetic(spec);
  const auto result = analyze(probe::inputs_from(corpus), PipelineConfig{});
  EXPECT_EQ(result.clusters.model.k, 3);
  EXPECT_EQ(result.stats.cells.size(), 6u);
  for (const auto& cell : result.stats.cells) EXPECT_TRUE(cell.result);
  EXPECT_EQ(nlohmann::json::parse(corpus.ground_truth_json)["biases"].size(), 0u);
}
