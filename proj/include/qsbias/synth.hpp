#pragma once

// Synthetic corpora with known, injected topical bias, used to check that
// the pipeline recovers real effects and stays quiet on null data.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qsbias/corpus.hpp"
#include "qsbias/embed.hpp"
#include "qsbias/preprocess.hpp"
#include "qsbias/stats.hpp"

namespace qsbias {

struct TopicLexicon {
  std::string name;
  std::vector<std::string> tokens;
};

// Applies to subjects whose `attribute` equals `group` (gender, party or
// state). rate_multiplier scales how often the topic is drawn; rank_shift
// is the mean rank displacement of the topic's suggestions (positive means
// further down the list).
struct GroupBias {
  Attribute attribute = Attribute::gender;
  std::string group;
  std::string topic;
  double rate_multiplier = 1.0;
  double rank_shift = 0.0;
};

struct SynthSpec {
  int n_subjects = 300;
  std::map<std::string, double> gender_marginals = {{"female", 0.34}, {"male", 0.66}};
  std::map<std::string, double> party_marginals = {
      {"CDU", 0.30}, {"SPD", 0.25}, {"GRÜNE", 0.15}, {"FDP", 0.10}, {"LINKE", 0.10}, {"CSU", 0.10}};
  std::map<std::string, double> state_marginals = {{"Baden-Württemberg", 0.20},
                                                   {"Bayern", 0.20},
                                                   {"Berlin", 0.20},
                                                   {"Nordrhein-Westfalen", 0.40}};
  int age_min = 25;
  int age_max = 80;
  int reference_year = 2021;
  // Empty means the three default topics (personal, places, politics).
  std::vector<TopicLexicon> topics;
  // Relative base rate per topic; empty means equal rates.
  std::vector<double> topic_weights;
  std::vector<GroupBias> biases;
  int snapshots_per_subject = 12;
  int list_length = 10;
  // Log-normal spread of each subject's own topic mix.
  double subject_heterogeneity = 0.3;
  // Share of slots filled with multi-word filler that preprocessing drops.
  double filler_rate = 0.1;
  // Shares of topic suggestions written as an inflected form or as a
  // two-word phrase (resolved by the lemma table or gazetteer).
  double inflected_rate = 0.1;
  double phrase_rate = 0.1;
  int embedding_dimension = 16;
  double blob_spread = 0.02;
  std::uint64_t seed = 1;
};

std::vector<TopicLexicon> default_topics(int tokens_per_topic = 30);

// Plackett-Luce weight exponent that moves `items` items of one kind in a
// list of `list_length` by `rank_shift` ranks on average, relative to an
// unbiased ordering. Solved exactly by dynamic programming and bisection.
// Throws a spec error if the shift is not attainable.
double calibrate_rank_temperature(double rank_shift, int items, int list_length);

// Exact expected mean rank of `items` items with weight exp(-temperature)
// among list_length - items items of weight 1.
double expected_mean_rank(double temperature, int items, int list_length);

struct CalibratedBias {
  GroupBias bias;
  int reference_items = 0;
  double temperature = 0.0;
  double expected_displacement = 0.0;
};

struct SynthCorpus {
  SubjectRegistry registry;
  std::vector<SuggestionSnapshot> snapshots;
  PreprocessTables tables;
  EmbeddingStore embeddings;
  std::vector<TopicLexicon> topics;
  std::vector<CalibratedBias> calibrated_biases;
  std::string ground_truth_json;
};

// Throws a spec error for infeasible or inconsistent specs.
SynthCorpus generate_synthetic(const SynthSpec& spec);

// subjects.csv, snapshots.jsonl, lemmas.tsv, gazetteer.tsv, stopwords.txt,
// embeddings.txt and ground_truth.json.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace qsbias
