#include "qsbias/preprocess.hpp"

#include <algorithm>
#include <json.hpp>

#include "qsbias/error.hpp"

namespace qsbias {

namespace {

bool is_clean_word(std::string_view w) {
  return !w.empty() && !has_whitespace(w) && utf8_lower(w) == w;
}

}  // namespace

LemmaTable::LemmaTable(std::map<std::string, std::string, std::less<>> entries)
    : map_(std::move(entries)) {
  for (const auto& [surface, lemma] : map_) {
    if (!is_clean_word(surface) || !is_clean_word(lemma)) {
      throw Error(ErrorKind::validation,
                  "lemma table entry '" + surface + "' -> '" + lemma + "' is not lowercase single words");
    }
  }
}

std::string_view LemmaTable::lookup(std::string_view word) const {
  const auto it = map_.find(word);
  return it == map_.end() ? word : std::string_view(it->second);
}

Gazetteer::Gazetteer(std::map<std::vector<std::string>, std::string> phrases)
    : phrases_(std::move(phrases)) {
  for (const auto& [phrase, canonical] : phrases_) {
    if (phrase.empty()) throw Error(ErrorKind::validation, "empty gazetteer phrase");
    for (const auto& w : phrase) {
      if (!is_clean_word(w)) throw Error(ErrorKind::validation, "gazetteer phrase word '" + w + "' invalid");
    }
    if (!is_clean_word(canonical)) {
      throw Error(ErrorKind::validation, "gazetteer token '" + canonical + "' is not a single lowercase word");
    }
    max_length_ = std::max(max_length_, phrase.size());
  }
}

std::size_t Gazetteer::longest_match(std::span<const std::string> words, std::size_t start,
                                     const std::string** canonical) const {
  const std::size_t limit = std::min(max_length_, words.size() - start);
  for (std::size_t len = limit; len >= 1; --len) {
    std::vector<std::string> key(words.begin() + start, words.begin() + start + len);
    if (auto it = phrases_.find(key); it != phrases_.end()) {
      if (canonical) *canonical = &it->second;
      return len;
    }
  }
  return 0;
}

LemmaTable parse_lemma_table(std::string_view tsv) {
  std::map<std::string, std::string, std::less<>> entries;
  for (const auto& row : parse_tsv(tsv)) {
    if (row.fields.size() != 2) throw ParseError("expected surface<TAB>lemma", row.line);
    std::string surface(trim(row.fields[0]));
    std::string lemma(trim(row.fields[1]));
    if (!is_clean_word(surface) || !is_clean_word(lemma)) {
      throw ParseError("lemma entries must be lowercase single words", row.line);
    }
    entries[std::move(surface)] = std::move(lemma);
  }
  return LemmaTable(std::move(entries));
}

Gazetteer parse_gazetteer(std::string_view tsv) {
  std::map<std::vector<std::string>, std::string> phrases;
  for (const auto& row : parse_tsv(tsv)) {
    if (row.fields.size() != 2) throw ParseError("expected phrase<TAB>canonical_token", row.line);
    std::vector<std::string> words;
    std::string_view rest = trim(row.fields[0]);
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      words.emplace_back(rest.substr(0, sp));
      if (sp == std::string_view::npos) break;
      rest = trim(rest.substr(sp + 1));
    }
    std::string canonical(trim(row.fields[1]));
    if (words.empty()) throw ParseError("empty phrase", row.line);
    for (const auto& w : words) {
      if (!is_clean_word(w)) throw ParseError("phrase words must be lowercase", row.line);
    }
    if (!is_clean_word(canonical)) throw ParseError("canonical token must be one lowercase word", row.line);
    phrases[std::move(words)] = std::move(canonical);
  }
  return Gazetteer(std::move(phrases));
}

WordSet parse_stopwords(std::string_view text) {
  WordSet out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto w = trim(text.substr(pos, end - pos));
    if (!w.empty() && w.front() != '#') out.insert(utf8_lower(w));
    pos = end + 1;
  }
  return out;
}

std::string write_lemma_table(const LemmaTable& table) {
  std::string out;
  for (const auto& [s, l] : table.entries()) out += s + '\t' + l + '\n';
  return out;
}

std::string write_gazetteer(const Gazetteer& gazetteer) {
  std::string out;
  for (const auto& [phrase, canonical] : gazetteer.phrases()) {
    for (std::size_t i = 0; i < phrase.size(); ++i) {
      if (i) out += ' ';
      out += phrase[i];
    }
    out += '\t' + canonical + '\n';
  }
  return out;
}

std::vector<std::string> clean(std::string_view raw, std::string_view subject_name,
                               const WordSet& stopwords) {
  const auto name_words = split_words(utf8_lower(subject_name));
  std::vector<std::string> out;
  for (auto& w : split_words(utf8_lower(raw))) {
    if (is_digits_only(w)) continue;
    if (std::find(name_words.begin(), name_words.end(), w) != name_words.end()) continue;
    if (stopwords.contains(w)) continue;
    out.push_back(std::move(w));
  }
  return out;
}

std::string lemmatize(std::string_view word, const LemmaTable& table) {
  return std::string(table.lookup(word));
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::direct: return "direct";
    case Provenance::lemmatized: return "lemmatized";
    case Provenance::entity_condensed: return "entity_condensed";
  }
  return "direct";
}

std::optional<Provenance> parse_provenance(std::string_view text) {
  if (text == "direct") return Provenance::direct;
  if (text == "lemmatized") return Provenance::lemmatized;
  if (text == "entity_condensed") return Provenance::entity_condensed;
  return std::nullopt;
}

std::optional<CondensedToken> condense_entities(std::span<const std::string> words,
                                                const Gazetteer& gazetteer) {
  if (words.empty()) return std::nullopt;
  std::vector<std::string> reduced;
  bool matched = false;
  for (std::size_t i = 0; i < words.size();) {
    const std::string* canonical = nullptr;
    if (const auto len = gazetteer.longest_match(words, i, &canonical); len > 0) {
      reduced.push_back(*canonical);
      matched = true;
      i += len;
    } else {
      reduced.push_back(words[i]);
      ++i;
    }
  }
  if (reduced.size() != 1) return std::nullopt;
  return CondensedToken{std::move(reduced.front()),
                        matched ? Provenance::entity_condensed : Provenance::direct};
}

const char* to_string(DropReason r) {
  return r == DropReason::empty_after_clean ? "empty_after_clean" : "multi_token";
}

void PreprocessReport::drop(DropReason reason) {
  ++dropped_count;
  ++drop_reasons[reason];
}

PreprocessReport& PreprocessReport::operator+=(const PreprocessReport& other) {
  input_count += other.input_count;
  kept_count += other.kept_count;
  dropped_count += other.dropped_count;
  for (const auto& [reason, n] : other.drop_reasons) drop_reasons[reason] += n;
  return *this;
}

std::pair<std::vector<TokenizedSuggestion>, PreprocessReport> preprocess_snapshot(
    const SuggestionSnapshot& snapshot, const Subject& subject, const PreprocessTables& tables) {
  if (snapshot.term_id != subject.term_id) {
    throw Error(ErrorKind::contract, "snapshot term '" + snapshot.term_id +
                                         "' does not match subject '" + subject.term_id + "'");
  }
  const auto name_words = split_words(utf8_lower(subject.display_name));
  std::vector<TokenizedSuggestion> tokens;
  PreprocessReport report;
  for (const Suggestion& s : snapshot.suggestions) {
    ++report.input_count;
    auto words = clean(s.text, subject.display_name, tables.stopwords);
    if (words.empty()) {
      report.drop(DropReason::empty_after_clean);
      continue;
    }
    bool lemma_changed = false;
    for (auto& w : words) {
      std::string lemma = lemmatize(w, tables.lemmas);
      if (lemma != w) {
        lemma_changed = true;
        w = std::move(lemma);
      }
    }
    auto condensed = condense_entities(words, tables.gazetteer);
    if (!condensed) {
      report.drop(DropReason::multi_token);
      continue;
    }
    // Table outputs may reintroduce a name word or a bare number.
    const bool echoes_name = std::find(name_words.begin(), name_words.end(), condensed->token) !=
                             name_words.end();
    if (echoes_name || is_digits_only(condensed->token)) {
      report.drop(DropReason::empty_after_clean);
      continue;
    }
    if (condensed->provenance == Provenance::direct && lemma_changed) {
      condensed->provenance = Provenance::lemmatized;
    }
    ++report.kept_count;
    tokens.push_back({snapshot.term_id, snapshot.engine, snapshot.timestamp, s.rank,
                      std::move(condensed->token), condensed->provenance});
  }
  return {std::move(tokens), report};
}

PreprocessedCorpus preprocess_corpus(std::span<const SuggestionSnapshot> snapshots,
                                     const SubjectRegistry& registry,
                                     const PreprocessTables& tables) {
  PreprocessedCorpus out;
  for (const auto& snap : snapshots) {
    const Subject* subject = registry.find(snap.term_id);
    if (!subject) {
      ++out.snapshots_without_subject;
      continue;
    }
    auto [tokens, report] = preprocess_snapshot(snap, *subject, tables);
    out.tokens.insert(out.tokens.end(), std::make_move_iterator(tokens.begin()),
                      std::make_move_iterator(tokens.end()));
    out.report += report;
    ++out.snapshots_processed;
  }
  return out;
}

std::string tokens_to_jsonl(std::span<const TokenizedSuggestion> tokens) {
  using nlohmann::json;
  std::string out;
  for (const auto& t : tokens) {
    out += "{\"term_id\":" + json(t.term_id).dump() + ",\"engine\":\"" + to_string(t.engine) +
           "\",\"timestamp\":\"" + format_rfc3339(t.timestamp) +
           "\",\"rank\":" + std::to_string(t.rank) + ",\"token\":" + json(t.token).dump() +
           ",\"provenance\":\"" + to_string(t.provenance) + "\"}\n";
  }
  return out;
}

std::vector<TokenizedSuggestion> tokens_from_jsonl(std::string_view text) {
  using nlohmann::json;
  std::vector<TokenizedSuggestion> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty()) continue;
    try {
      const auto doc = json::parse(line);
      TokenizedSuggestion t;
      t.term_id = doc.at("term_id").get<std::string>();
      const auto engine = parse_engine(doc.at("engine").get<std::string>());
      const auto ts = parse_rfc3339(doc.at("timestamp").get<std::string>());
      const auto prov = parse_provenance(doc.at("provenance").get<std::string>());
      t.rank = doc.at("rank").get<int>();
      t.token = doc.at("token").get<std::string>();
      if (!engine || !ts || !prov || t.rank < 1 || t.rank > kMaxRank || t.token.empty() ||
          has_whitespace(t.token)) {
        throw ParseError("invalid token record", line_no);
      }
      t.engine = *engine;
      t.timestamp = *ts;
      t.provenance = *prov;
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace qsbias
