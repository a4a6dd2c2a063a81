#pragma once

// Raw suggestion text -> single lowercase tokens: cleaning, table-driven
// lemmatization and gazetteer-based entity condensation.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsbias/corpus.hpp"

namespace qsbias {

using WordSet = std::set<std::string, std::less<>>;

// surface form -> lemma; both lowercase and whitespace-free.
class LemmaTable {
 public:
  LemmaTable() = default;
  explicit LemmaTable(std::map<std::string, std::string, std::less<>> entries);

  // Lemma for `word`, or `word` itself when absent.
  std::string_view lookup(std::string_view word) const;
  const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return map_; }
  std::size_t size() const noexcept { return map_.size(); }

 private:
  std::map<std::string, std::string, std::less<>> map_;
};

// Word sequence -> single canonical token.
class Gazetteer {
 public:
  Gazetteer() = default;
  explicit Gazetteer(std::map<std::vector<std::string>, std::string> phrases);

  // Length of the longest phrase starting at `start`, 0 if none.
  std::size_t longest_match(std::span<const std::string> words, std::size_t start,
                            const std::string** canonical) const;
  const std::map<std::vector<std::string>, std::string>& phrases() const noexcept {
    return phrases_;
  }
  std::size_t size() const noexcept { return phrases_.size(); }

 private:
  std::map<std::vector<std::string>, std::string> phrases_;
  std::size_t max_length_ = 0;
};

// TSV surface<TAB>lemma.
LemmaTable parse_lemma_table(std::string_view tsv);
// TSV phrase<TAB>canonical_token; phrase words separated by spaces.
Gazetteer parse_gazetteer(std::string_view tsv);
// One word per line.
WordSet parse_stopwords(std::string_view text);

std::string write_lemma_table(const LemmaTable& table);
std::string write_gazetteer(const Gazetteer& gazetteer);

// Lowercases, splits on punctuation and whitespace, then removes words of
// the subject's name, digit-only words and stopwords. Order is preserved.
std::vector<std::string> clean(std::string_view raw, std::string_view subject_name,
                               const WordSet& stopwords);

std::string lemmatize(std::string_view word, const LemmaTable& table);

enum class Provenance { direct, lemmatized, entity_condensed };
const char* to_string(Provenance p);
std::optional<Provenance> parse_provenance(std::string_view text);

struct CondensedToken {
  std::string token;
  Provenance provenance = Provenance::direct;
};

// Left-to-right longest-match replacement of gazetteer phrases. Returns the
// token if the words reduce to exactly one, otherwise nothing.
std::optional<CondensedToken> condense_entities(std::span<const std::string> words,
                                                const Gazetteer& gazetteer);

struct TokenizedSuggestion {
  std::string term_id;
  Engine engine = Engine::google;
  Timestamp timestamp{};
  int rank = 0;
  std::string token;
  Provenance provenance = Provenance::direct;

  bool operator==(const TokenizedSuggestion&) const = default;
};

enum class DropReason { empty_after_clean, multi_token };
const char* to_string(DropReason r);

struct PreprocessReport {
  std::size_t input_count = 0;
  std::size_t kept_count = 0;
  std::size_t dropped_count = 0;
  std::map<DropReason, std::size_t> drop_reasons;

  void drop(DropReason reason);
  PreprocessReport& operator+=(const PreprocessReport& other);
  double drop_rate() const {
    return input_count == 0 ? 0.0 : double(dropped_count) / double(input_count);
  }
};

struct PreprocessTables {
  LemmaTable lemmas;
  Gazetteer gazetteer;
  WordSet stopwords;
};

// Each suggestion is cleaned, lemmatized word by word, then condensed.
// Survivors keep their original rank. Throws a contract error if the
// subject does not belong to the snapshot.
std::pair<std::vector<TokenizedSuggestion>, PreprocessReport> preprocess_snapshot(
    const SuggestionSnapshot& snapshot, const Subject& subject, const PreprocessTables& tables);

struct PreprocessedCorpus {
  std::vector<TokenizedSuggestion> tokens;
  PreprocessReport report;
  std::size_t snapshots_processed = 0;
  std::size_t snapshots_without_subject = 0;
};

// Snapshots whose term is not in the registry are skipped and counted.
PreprocessedCorpus preprocess_corpus(std::span<const SuggestionSnapshot> snapshots,
                                     const SubjectRegistry& registry,
                                     const PreprocessTables& tables);

std::string tokens_to_jsonl(std::span<const TokenizedSuggestion> tokens);
std::vector<TokenizedSuggestion> tokens_from_jsonl(std::string_view text);

}  // namespace qsbias
