#include "qsbias/synth.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

#include "qsbias/error.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

namespace {

std::string letter_code(std::size_t index, int width = 3) {
  std::string out(static_cast<std::size_t>(width), 'a');
  for (int i = width - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<char>('a' + index % 26);
    index /= 26;
  }
  return out;
}

void check_marginals(const std::map<std::string, double>& m, const char* what) {
  if (m.empty()) throw Error(ErrorKind::spec, std::string(what) + " marginals are empty");
  double total = 0.0;
  for (const auto& [level, p] : m) {
    if (!(p >= 0.0)) throw Error(ErrorKind::spec, std::string(what) + " marginal for " + level + " is negative");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::spec, std::string(what) + " marginals sum to " + format_double(total));
  }
}

std::string draw_level(const std::map<std::string, double>& m, Rng& rng) {
  std::vector<double> w;
  std::vector<const std::string*> levels;
  for (const auto& [level, p] : m) {
    w.push_back(p);
    levels.push_back(&level);
  }
  return *levels[rng.weighted(w)];
}

bool bias_applies(const GroupBias& b, const Subject& s) {
  switch (b.attribute) {
    case Attribute::gender: return to_string(s.gender) == b.group;
    case Attribute::party: return s.party && *s.party == b.group;
    case Attribute::state: return s.federated_state && *s.federated_state == b.group;
    case Attribute::age: return false;
  }
  return false;
}

const std::vector<std::string> kFirstNames = {"anna", "lena",  "maria", "petra", "julia", "karl",
                                              "peter", "jonas", "lukas", "frank", "sabine", "uwe"};

const std::vector<std::string> kFillerPhrases = {"tickets kaufen", "news heute", "live stream",
                                                 "instagram foto", "twitter account", "zitate sprueche",
                                                 "bilder privat", "video youtube"};

}  // namespace

std::vector<TopicLexicon> default_topics(int tokens_per_topic) {
  const std::vector<std::pair<std::string, std::string>> stems = {
      {"personal", "priv"}, {"places", "ortx"}, {"politics", "polt"}};
  std::vector<TopicLexicon> out;
  for (const auto& [name, stem] : stems) {
    TopicLexicon t;
    t.name = name;
    for (int i = 0; i < tokens_per_topic; ++i) t.tokens.push_back(stem + letter_code(static_cast<std::size_t>(i)));
    out.push_back(std::move(t));
  }
  return out;
}

double expected_mean_rank(double temperature, int items, int list_length) {
  if (items < 1 || items > list_length) throw Error(ErrorKind::spec, "items must be in [1, list_length]");
  const double w = std::exp(-temperature);
  const int others = list_length - items;
  // sums[a][b]: expected sum of ranks of the remaining a weighted items
  // when a + b slots remain.
  std::vector<std::vector<double>> sums(items + 1, std::vector<double>(others + 1, 0.0));
  for (int a = 1; a <= items; ++a) {
    for (int b = 0; b <= others; ++b) {
      const double pos = list_length - a - b + 1;
      if (b == 0) {
        sums[a][b] = a * pos + a * (a - 1) / 2.0;
        continue;
      }
      const double pa = a * w / (a * w + b);
      sums[a][b] = pa * (pos + sums[a - 1][b]) + (1.0 - pa) * sums[a][b - 1];
    }
  }
  return sums[items][others] / items;
}

double calibrate_rank_temperature(double rank_shift, int items, int list_length) {
  if (rank_shift == 0.0) return 0.0;
  const double neutral = (list_length + 1) / 2.0;
  const double reachable = (list_length - items) / 2.0;
  if (std::fabs(rank_shift) >= 0.99 * reachable) {
    throw Error(ErrorKind::spec, "rank_shift " + format_double(rank_shift) + " not attainable with " +
                                     std::to_string(items) + " of " + std::to_string(list_length) +
                                     " items");
  }
  double lo = rank_shift > 0 ? 0.0 : -60.0;
  double hi = rank_shift > 0 ? 60.0 : 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double shift = expected_mean_rank(mid, items, list_length) - neutral;
    if (shift < rank_shift) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  if (spec.n_subjects < 1) throw Error(ErrorKind::spec, "n_subjects must be positive");
  if (spec.snapshots_per_subject < 1) throw Error(ErrorKind::spec, "snapshots_per_subject must be positive");
  if (spec.list_length < 1 || spec.list_length > kMaxRank) throw Error(ErrorKind::spec, "list_length must be in 1..10");
  if (spec.age_min > spec.age_max || spec.age_min < 0) throw Error(ErrorKind::spec, "invalid age range");
  if (spec.reference_year - spec.age_max < 1900) throw Error(ErrorKind::spec, "ages imply birth years before 1900");
  for (double r : {spec.filler_rate, spec.inflected_rate, spec.phrase_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::spec, "rates must lie in [0, 1]");
  }
  if (spec.inflected_rate + spec.phrase_rate > 1.0) throw Error(ErrorKind::spec, "inflected_rate + phrase_rate > 1");
  if (spec.filler_rate >= 1.0) throw Error(ErrorKind::spec, "filler_rate must be below 1");
  if (!(spec.subject_heterogeneity >= 0.0) || !(spec.blob_spread >= 0.0)) {
    throw Error(ErrorKind::spec, "spreads must be nonnegative");
  }
  check_marginals(spec.gender_marginals, "gender");
  check_marginals(spec.party_marginals, "party");
  check_marginals(spec.state_marginals, "state");
  for (const auto& [g, p] : spec.gender_marginals) {
    if (g != "male" && g != "female") throw Error(ErrorKind::spec, "gender levels must be male/female");
  }

  SynthCorpus corpus;
  corpus.topics = spec.topics.empty() ? default_topics() : spec.topics;
  const auto& topics = corpus.topics;
  const std::size_t n_topics = topics.size();
  if (n_topics < 2) throw Error(ErrorKind::spec, "need at least two topics");
  std::set<std::string> all_tokens;
  std::map<std::string, std::size_t> topic_index;
  for (std::size_t t = 0; t < n_topics; ++t) {
    if (!topic_index.emplace(topics[t].name, t).second) throw Error(ErrorKind::spec, "duplicate topic name");
    if (topics[t].tokens.size() < static_cast<std::size_t>(spec.list_length)) {
      throw Error(ErrorKind::spec, "lexicon '" + topics[t].name + "' has fewer tokens than the list length");
    }
    for (const auto& tok : topics[t].tokens) {
      const auto words = split_words(tok);
      if (words.size() != 1 || words[0] != tok || utf8_lower(tok) != tok || tok.size() < 4) {
        throw Error(ErrorKind::spec, "lexicon token '" + tok + "' must be one lowercase word of 4+ letters");
      }
      if (!all_tokens.insert(tok).second) throw Error(ErrorKind::spec, "lexicons are not disjoint: " + tok);
    }
  }
  std::vector<double> base_weights = spec.topic_weights;
  if (base_weights.empty()) base_weights.assign(n_topics, 1.0);
  if (base_weights.size() != n_topics) throw Error(ErrorKind::spec, "topic_weights size mismatch");
  for (double w : base_weights) {
    if (!(w > 0.0)) throw Error(ErrorKind::spec, "topic weights must be positive");
  }
  if (spec.embedding_dimension < static_cast<int>(n_topics)) {
    throw Error(ErrorKind::spec, "embedding_dimension must be at least the number of topics");
  }

  // Calibrate every bias against the expected topic count in a list.
  double weight_total = 0.0;
  for (double w : base_weights) weight_total += w;
  for (const auto& b : spec.biases) {
    if (!(b.rate_multiplier > 0.0)) throw Error(ErrorKind::spec, "rate_multiplier must be positive");
    if (b.attribute == Attribute::age) throw Error(ErrorKind::spec, "age biases are not supported");
    const auto it = topic_index.find(b.topic);
    if (it == topic_index.end()) throw Error(ErrorKind::spec, "bias names unknown topic '" + b.topic + "'");
    const auto& marg = b.attribute == Attribute::gender  ? spec.gender_marginals
                       : b.attribute == Attribute::party ? spec.party_marginals
                                                         : spec.state_marginals;
    if (!marg.contains(b.group)) throw Error(ErrorKind::spec, "bias group '" + b.group + "' has no marginal");
    const double w_t = base_weights[it->second] * b.rate_multiplier;
    const double share = w_t / (weight_total - base_weights[it->second] + w_t);
    const double expected = spec.list_length * (1.0 - spec.filler_rate) * share;
    const int items = std::clamp(static_cast<int>(std::lround(expected)), 1, std::max(1, spec.list_length - 1));
    CalibratedBias cb;
    cb.bias = b;
    cb.reference_items = items;
    cb.temperature = calibrate_rank_temperature(b.rank_shift, items, spec.list_length);
    cb.expected_displacement =
        expected_mean_rank(cb.temperature, items, spec.list_length) - (spec.list_length + 1) / 2.0;
    corpus.calibrated_biases.push_back(cb);
  }

  // Subjects.
  Rng subject_rng(substream_seed(spec.seed, "synth.subjects"));
  std::vector<Subject> subjects;
  Vocabularies vocab;
  for (int i = 0; i < spec.n_subjects; ++i) {
    Subject s;
    s.term_id = "s" + std::string(i < 1000 ? (i < 100 ? (i < 10 ? "000" : "00") : "0") : "") + std::to_string(i);
    s.display_name = kFirstNames[subject_rng.below(kFirstNames.size())];
    s.display_name[0] = static_cast<char>(s.display_name[0] - 'a' + 'A');
    s.display_name += " Muster" + letter_code(static_cast<std::size_t>(i), 4);
    s.gender = draw_level(spec.gender_marginals, subject_rng) == "female" ? Gender::female : Gender::male;
    const int age = spec.age_min + static_cast<int>(subject_rng.below(
                                       static_cast<std::uint64_t>(spec.age_max - spec.age_min + 1)));
    s.birth_year = spec.reference_year - age;
    s.party = draw_level(spec.party_marginals, subject_rng);
    s.federated_state = draw_level(spec.state_marginals, subject_rng);
    vocab.parties.insert(*s.party);
    vocab.states.insert(*s.federated_state);
    subjects.push_back(std::move(s));
  }
  corpus.registry = SubjectRegistry(subjects, vocab, spec.reference_year);

  // Tables: inflected forms and two-word phrases for every lexicon token.
  std::map<std::string, std::string, std::less<>> lemmas;
  std::map<std::vector<std::string>, std::string> phrases;
  for (const auto& t : topics) {
    for (const auto& tok : t.tokens) {
      lemmas[tok + "en"] = tok;
      const std::size_t half = tok.size() / 2;
      phrases[{tok.substr(0, half), tok.substr(half)}] = tok;
    }
  }
  corpus.tables.lemmas = LemmaTable(std::move(lemmas));
  corpus.tables.gazetteer = Gazetteer(std::move(phrases));

  // Snapshots.
  Rng snap_rng(substream_seed(spec.seed, "synth.snapshots"));
  using namespace std::chrono;
  const Timestamp base_time = sys_days{year{spec.reference_year} / January / 4} + hours{6};
  const Engine engines[] = {Engine::google, Engine::duckduckgo, Engine::bing};
  for (const Subject& s : corpus.registry.subjects()) {
    std::vector<double> weights(n_topics);
    std::vector<double> temperature(n_topics, 0.0);
    for (std::size_t t = 0; t < n_topics; ++t) {
      weights[t] = base_weights[t] * std::exp(spec.subject_heterogeneity * snap_rng.normal());
    }
    for (const auto& cb : corpus.calibrated_biases) {
      if (!bias_applies(cb.bias, s)) continue;
      const std::size_t t = topic_index.at(cb.bias.topic);
      weights[t] *= cb.bias.rate_multiplier;
      temperature[t] += cb.temperature;
    }
    const std::string name_lower = utf8_lower(s.display_name);

    for (int j = 0; j < spec.snapshots_per_subject; ++j) {
      struct Item {
        std::string text;
        double weight;
      };
      std::vector<Item> items;
      std::vector<std::set<std::size_t>> used(n_topics);
      for (int slot = 0; slot < spec.list_length; ++slot) {
        if (snap_rng.uniform() < spec.filler_rate) {
          const bool year_only = snap_rng.uniform() < 0.2;
          const std::string filler = year_only ? std::to_string(spec.reference_year - 1 + int(snap_rng.below(2)))
                                               : kFillerPhrases[snap_rng.below(kFillerPhrases.size())];
          items.push_back({name_lower + " " + filler, 1.0});
          continue;
        }
        const std::size_t t = snap_rng.weighted(weights);
        const auto& lex = topics[t].tokens;
        std::size_t pick;
        do {
          pick = snap_rng.below(lex.size());
        } while (used[t].contains(pick));
        used[t].insert(pick);
        const std::string& tok = lex[pick];
        const double form = snap_rng.uniform();
        std::string surface;
        if (form < spec.inflected_rate) {
          surface = tok + "en";
        } else if (form < spec.inflected_rate + spec.phrase_rate) {
          surface = tok.substr(0, tok.size() / 2) + " " + tok.substr(tok.size() / 2);
        } else {
          surface = tok;
        }
        items.push_back({name_lower + " " + surface, std::exp(-temperature[t])});
      }
      // Plackett-Luce ordering: each rank drawn in proportion to weight.
      std::vector<std::string> ordered;
      while (!items.empty()) {
        std::vector<double> w;
        for (const auto& it : items) w.push_back(it.weight);
        const std::size_t k = snap_rng.weighted(w);
        ordered.push_back(std::move(items[k].text));
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(k));
      }
      SuggestionSnapshot snap;
      snap.term_id = s.term_id;
      snap.engine = engines[j % 3];
      snap.timestamp = base_time + hours{12} * j;
      snap.language = "de-DE";
      snap.suggestions = rank_suggestions(ordered);
      corpus.snapshots.push_back(std::move(snap));
    }
  }

  // Embeddings: one tight blob per topic around a distinct axis.
  Rng emb_rng(substream_seed(spec.seed, "synth.embeddings"));
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> values;
  for (std::size_t t = 0; t < n_topics; ++t) {
    for (const auto& tok : topics[t].tokens) {
      std::vector<double> v(static_cast<std::size_t>(spec.embedding_dimension));
      for (auto& x : v) x = spec.blob_spread * emb_rng.normal();
      v[t] += 1.0;
      tokens.push_back(tok);
      values.push_back(std::move(v));
    }
  }
  corpus.embeddings = EmbeddingStore(static_cast<std::size_t>(spec.embedding_dimension), std::move(tokens),
                                     std::move(values));

  nlohmann::json truth;
  truth["seed"] = spec.seed;
  truth["n_subjects"] = spec.n_subjects;
  truth["snapshots_per_subject"] = spec.snapshots_per_subject;
  truth["list_length"] = spec.list_length;
  truth["reference_year"] = spec.reference_year;
  truth["subject_heterogeneity"] = spec.subject_heterogeneity;
  truth["filler_rate"] = spec.filler_rate;
  for (std::size_t t = 0; t < n_topics; ++t) {
    truth["topics"].push_back({{"name", topics[t].name}, {"base_weight", base_weights[t]}, {"tokens", topics[t].tokens}});
  }
  truth["biases"] = nlohmann::json::array();
  for (const auto& cb : corpus.calibrated_biases) {
    truth["biases"].push_back({{"attribute", to_string(cb.bias.attribute)},
                               {"group", cb.bias.group},
                               {"topic", cb.bias.topic},
                               {"rate_multiplier", cb.bias.rate_multiplier},
                               {"rank_shift", cb.bias.rank_shift},
                               {"reference_items", cb.reference_items},
                               {"temperature", cb.temperature},
                               {"expected_displacement", cb.expected_displacement}});
  }
  corpus.ground_truth_json = truth.dump(2) + "\n";
  return corpus;
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::storage, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "subjects.csv", write_subject_registry(corpus.registry));
  std::string lines;
  for (const auto& s : corpus.snapshots) lines += snapshot_to_json_line(s) + "\n";
  write_file(dir / "snapshots.jsonl", lines);
  write_file(dir / "lemmas.tsv", write_lemma_table(corpus.tables.lemmas));
  write_file(dir / "gazetteer.tsv", write_gazetteer(corpus.tables.gazetteer));
  write_file(dir / "stopwords.txt", "");
  write_file(dir / "embeddings.txt", write_embedding_text(corpus.embeddings));
  write_file(dir / "ground_truth.json", corpus.ground_truth_json);
}

}  // namespace qsbias
