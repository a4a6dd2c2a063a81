#include "qsbias/corpus.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "qsbias/error.hpp"

namespace qsbias {

using nlohmann::json;

const char* to_string(Gender g) {
  switch (g) {
    case Gender::male: return "male";
    case Gender::female: return "female";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

const char* to_string(Engine e) {
  switch (e) {
    case Engine::google: return "google";
    case Engine::duckduckgo: return "duckduckgo";
    case Engine::bing: return "bing";
    case Engine::custom: return "custom";
  }
  return "custom";
}

std::optional<Gender> parse_gender(std::string_view text) {
  const std::string t = utf8_lower(trim(text));
  if (t == "male" || t == "m") return Gender::male;
  if (t == "female" || t == "f") return Gender::female;
  if (t.empty() || t == "unknown") return Gender::unknown;
  return std::nullopt;
}

std::optional<Engine> parse_engine(std::string_view text) {
  if (text == "google") return Engine::google;
  if (text == "duckduckgo") return Engine::duckduckgo;
  if (text == "bing") return Engine::bing;
  if (text == "custom") return Engine::custom;
  return std::nullopt;
}

// ---- registry --------------------------------------------------------------

SubjectRegistry::SubjectRegistry(std::vector<Subject> subjects, Vocabularies vocabularies,
                                 int current_year)
    : subjects_(std::move(subjects)), vocabularies_(std::move(vocabularies)) {
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const Subject& s = subjects_[i];
    if (s.term_id.empty()) throw Error(ErrorKind::validation, "subject with empty term_id");
    if (trim(s.display_name).empty()) {
      throw Error(ErrorKind::validation, "subject " + s.term_id + " has an empty display_name");
    }
    if (s.birth_year && (*s.birth_year < 1900 || *s.birth_year > current_year)) {
      throw Error(ErrorKind::validation, "subject " + s.term_id + ": birth_year " +
                                             std::to_string(*s.birth_year) + " outside [1900, " +
                                             std::to_string(current_year) + "]");
    }
    if (s.party && !vocabularies_.parties.contains(*s.party)) {
      throw Error(ErrorKind::validation, "subject " + s.term_id + ": party '" + *s.party +
                                             "' not in vocabulary");
    }
    if (s.federated_state && !vocabularies_.states.contains(*s.federated_state)) {
      throw Error(ErrorKind::validation, "subject " + s.term_id + ": state '" +
                                             *s.federated_state + "' not in vocabulary");
    }
    if (!index_.emplace(s.term_id, i).second) {
      throw Error(ErrorKind::duplicate_key, "duplicate term_id '" + s.term_id + "'");
    }
  }
}

const Subject* SubjectRegistry::find(std::string_view term_id) const {
  const auto it = index_.find(term_id);
  return it == index_.end() ? nullptr : &subjects_[it->second];
}

SubjectRegistry parse_subject_registry(std::string_view csv, std::optional<int> current_year) {
  const int year_cap = current_year.value_or(current_utc_year());
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw ParseError("missing header", 1);

  static const std::vector<std::string> required = {"term_id", "birth_year", "display_name",
                                                    "gender",  "party",      "state"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) {
    col[std::string(trim(rows[0].fields[i]))] = i;
  }
  for (const auto& name : required) {
    if (!col.contains(name)) throw ParseError("header lacks column '" + name + "'", rows[0].line);
  }

  std::vector<Subject> subjects;
  Vocabularies vocab;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const CsvRow& row = rows[r];
    if (row.fields.size() != rows[0].fields.size()) {
      throw ParseError("expected " + std::to_string(rows[0].fields.size()) + " fields, got " +
                           std::to_string(row.fields.size()),
                       row.line);
    }
    auto cell = [&](const std::string& name) {
      return std::string(trim(row.fields[col.at(name)]));
    };
    Subject s;
    s.term_id = cell("term_id");
    s.display_name = cell("display_name");
    if (s.term_id.empty()) throw ParseError("empty term_id", row.line);
    if (!seen.insert(s.term_id).second) {
      throw Error(ErrorKind::duplicate_key, "line " + std::to_string(row.line) +
                                                ": duplicate term_id '" + s.term_id + "'");
    }
    const auto gender = parse_gender(cell("gender"));
    if (!gender) throw ParseError("unrecognized gender '" + cell("gender") + "'", row.line);
    s.gender = *gender;
    if (const std::string by = cell("birth_year"); !by.empty()) {
      int year = 0;
      const auto res = std::from_chars(by.data(), by.data() + by.size(), year);
      if (res.ec != std::errc{} || res.ptr != by.data() + by.size()) {
        throw ParseError("birth_year '" + by + "' is not an integer", row.line);
      }
      if (year < 1900 || year > year_cap) {
        throw Error(ErrorKind::validation, "line " + std::to_string(row.line) + ": birth_year " +
                                               by + " outside [1900, " +
                                               std::to_string(year_cap) + "]");
      }
      s.birth_year = year;
    }
    if (std::string p = cell("party"); !p.empty()) {
      vocab.parties.insert(p);
      s.party = std::move(p);
    }
    if (std::string st = cell("state"); !st.empty()) {
      vocab.states.insert(st);
      s.federated_state = std::move(st);
    }
    if (s.display_name.empty()) throw ParseError("empty display_name", row.line);
    subjects.push_back(std::move(s));
  }
  return SubjectRegistry(std::move(subjects), std::move(vocab), year_cap);
}

std::string write_subject_registry(const SubjectRegistry& registry) {
  std::string out = "term_id,display_name,gender,birth_year,party,state\n";
  for (const Subject& s : registry.subjects()) {
    out += csv_escape(s.term_id) + ',' + csv_escape(s.display_name) + ',';
    if (s.gender != Gender::unknown) out += to_string(s.gender);
    out += ',';
    if (s.birth_year) out += std::to_string(*s.birth_year);
    out += ',';
    if (s.party) out += csv_escape(*s.party);
    out += ',';
    if (s.federated_state) out += csv_escape(*s.federated_state);
    out += '\n';
  }
  return out;
}

// ---- snapshots -------------------------------------------------------------

std::optional<std::string> snapshot_violation(const SuggestionSnapshot& snapshot) {
  if (snapshot.term_id.empty()) return "empty term_id";
  if (snapshot.suggestions.size() > static_cast<std::size_t>(kMaxRank)) {
    return "more than 10 suggestions";
  }
  for (std::size_t i = 0; i < snapshot.suggestions.size(); ++i) {
    const Suggestion& s = snapshot.suggestions[i];
    const int expected = static_cast<int>(i) + 1;
    if (s.rank != expected) {
      if (i == 0) return "ranks must start at 1";
      if (s.rank <= snapshot.suggestions[i - 1].rank) return "ranks not strictly increasing";
      return "rank gap";
    }
    if (trim(s.text).empty()) return "empty suggestion text at rank " + std::to_string(s.rank);
  }
  return std::nullopt;
}

void validate_snapshot(const SuggestionSnapshot& snapshot) {
  if (auto v = snapshot_violation(snapshot)) throw Error(ErrorKind::validation, *v);
}

std::vector<Suggestion> rank_suggestions(std::span<const std::string> texts) {
  std::vector<Suggestion> out;
  for (const auto& t : texts) {
    if (out.size() == static_cast<std::size_t>(kMaxRank)) break;
    if (trim(t).empty()) continue;
    out.push_back({static_cast<int>(out.size()) + 1, t});
  }
  return out;
}

// ---- fetching --------------------------------------------------------------

const char* to_string(ResponseShape s) {
  return s == ResponseShape::array_pair ? "array_pair" : "object_list";
}

std::optional<ResponseShape> parse_response_shape(std::string_view text) {
  if (text == "array_pair") return ResponseShape::array_pair;
  if (text == "object_list") return ResponseShape::object_list;
  return std::nullopt;
}

EndpointTable default_endpoints() {
  EndpointTable t;
  t[Engine::google] = {"https://suggestqueries.google.com/complete/search?client=firefox&hl={lang}&q={query}",
                       ResponseShape::array_pair};
  t[Engine::duckduckgo] = {"https://duckduckgo.com/ac/?kl={lang}&q={query}",
                           ResponseShape::object_list};
  t[Engine::bing] = {"https://api.bing.com/osjson.aspx?mkt={lang}&query={query}",
                     ResponseShape::array_pair};
  return t;
}

EndpointTable parse_endpoint_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::configuration, std::string("endpoint config: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::configuration, "endpoint config must be an object");
  EndpointTable table;
  for (const auto& [name, entry] : doc.items()) {
    const auto engine = parse_engine(name);
    if (!engine) throw Error(ErrorKind::configuration, "unknown engine '" + name + "'");
    try {
      EndpointConfig cfg;
      cfg.url_template = entry.at("url_template").get<std::string>();
      const auto shape = parse_response_shape(entry.at("response_shape").get<std::string>());
      if (!shape) throw Error(ErrorKind::configuration, "unknown response_shape for " + name);
      cfg.response_shape = *shape;
      cfg.min_delay_ms = entry.value("min_delay_ms", 1000);
      cfg.jitter_ms = entry.value("jitter_ms", 250);
      cfg.timeout_ms = entry.value("timeout_ms", 10000);
      if (cfg.min_delay_ms < 0 || cfg.jitter_ms < 0 || cfg.timeout_ms <= 0) {
        throw Error(ErrorKind::configuration, "negative delay for " + name);
      }
      table[*engine] = std::move(cfg);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::configuration, "endpoint " + name + ": " + e.what());
    }
  }
  return table;
}

std::string percent_encode(std::string_view text) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : text) {
    const bool unreserved = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                            (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.' || c == '~';
    if (unreserved) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

std::string expand_url_template(const EndpointConfig& config, std::string_view query,
                                std::string_view language) {
  std::string out;
  const std::string& t = config.url_template;
  for (std::size_t i = 0; i < t.size();) {
    if (t.compare(i, 7, "{query}") == 0) {
      out += percent_encode(query);
      i += 7;
    } else if (t.compare(i, 6, "{lang}") == 0) {
      out += percent_encode(language);
      i += 6;
    } else {
      out.push_back(t[i++]);
    }
  }
  return out;
}

std::vector<std::string> parse_suggestion_body(std::string_view body, ResponseShape shape) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("unparseable body: ") + e.what(), 200, std::string(body));
  }
  std::vector<std::string> texts;
  auto bad = [&](const std::string& why) {
    return ProtocolError("unexpected response shape: " + why, 200, std::string(body));
  };
  if (shape == ResponseShape::array_pair) {
    if (!doc.is_array() || doc.size() < 2 || !doc[1].is_array()) throw bad("expected [query, [..]]");
    for (const auto& item : doc[1]) {
      if (!item.is_string()) throw bad("non-string suggestion");
      texts.push_back(item.get<std::string>());
    }
  } else {
    if (!doc.is_array()) throw bad("expected an array of objects");
    for (const auto& item : doc) {
      if (!item.is_object() || !item.contains("phrase") || !item["phrase"].is_string()) {
        throw bad("expected {\"phrase\": ...}");
      }
      texts.push_back(item["phrase"].get<std::string>());
    }
  }
  return texts;
}

void RateLimiter::acquire(Engine engine, const EndpointConfig& config) {
  using clock = std::chrono::steady_clock;
  clock::time_point start;
  {
    std::lock_guard lock(mutex_);
    const auto now = clock::now();
    auto it = next_allowed_.find(engine);
    start = (it == next_allowed_.end() || it->second < now) ? now : it->second;
    const auto jitter = config.jitter_ms > 0 ? static_cast<long>(rng_.below(config.jitter_ms + 1)) : 0L;
    next_allowed_[engine] = start + std::chrono::milliseconds(config.min_delay_ms + jitter);
  }
  std::this_thread::sleep_until(start);
}

SuggestionSnapshot fetch_suggestions(Engine engine, const std::string& term_id,
                                     std::string_view query, std::string_view language,
                                     const EndpointConfig& config, RateLimiter* limiter) {
  const std::string url = expand_url_template(config, query, language);
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::configuration, "url without scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  if (limiter) limiter->acquire(engine, config);

  httplib::Client client(origin);
  const auto timeout = std::chrono::milliseconds(config.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_follow_location(true);
  auto res = client.Get(path);
  if (!res) {
    throw FetchError("request to " + origin + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError("HTTP status " + std::to_string(res->status), res->status, res->body);
  }

  SuggestionSnapshot snap;
  snap.term_id = term_id;
  snap.engine = engine;
  snap.language = std::string(language);
  snap.timestamp = std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
  const auto texts = parse_suggestion_body(res->body, config.response_shape);
  snap.suggestions = rank_suggestions(texts);
  return snap;
}

// ---- storage ---------------------------------------------------------------

std::string snapshot_to_json_line(const SuggestionSnapshot& snapshot) {
  json suggestions = json::array();
  for (const auto& s : snapshot.suggestions) {
    suggestions.push_back(json::object({{"rank", s.rank}, {"text", s.text}}));
  }
  // Key order is fixed by the storage format, so build the text directly.
  std::string out = "{\"term_id\":" + json(snapshot.term_id).dump() +
                    ",\"engine\":" + json(to_string(snapshot.engine)).dump() +
                    ",\"timestamp\":" + json(format_rfc3339(snapshot.timestamp)).dump() +
                    ",\"language\":" + json(snapshot.language).dump() + ",\"suggestions\":[";
  for (std::size_t i = 0; i < snapshot.suggestions.size(); ++i) {
    if (i) out += ',';
    out += "{\"rank\":" + std::to_string(snapshot.suggestions[i].rank) +
           ",\"text\":" + json(snapshot.suggestions[i].text).dump() + "}";
  }
  out += "]}";
  return out;
}

SuggestionSnapshot snapshot_from_json_line(std::string_view line) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::validation, std::string("invalid JSON: ") + e.what());
  }
  SuggestionSnapshot s;
  try {
    s.term_id = doc.at("term_id").get<std::string>();
    const auto engine = parse_engine(doc.at("engine").get<std::string>());
    if (!engine) throw Error(ErrorKind::validation, "unknown engine");
    s.engine = *engine;
    const auto ts = parse_rfc3339(doc.at("timestamp").get<std::string>());
    if (!ts) throw Error(ErrorKind::validation, "invalid timestamp");
    s.timestamp = *ts;
    s.language = doc.at("language").get<std::string>();
    for (const auto& item : doc.at("suggestions")) {
      s.suggestions.push_back({item.at("rank").get<int>(), item.at("text").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed snapshot: ") + e.what());
  }
  validate_snapshot(s);
  return s;
}

std::size_t append_snapshots(const std::filesystem::path& path,
                             std::span<const SuggestionSnapshot> snapshots) {
  if (snapshots.empty()) return 0;
  std::string buffer;
  for (const auto& s : snapshots) {
    validate_snapshot(s);
    buffer += snapshot_to_json_line(s);
    buffer += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::storage, "cannot open " + path.string() + " for appending");
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::storage, "write to " + path.string() + " failed");
  return snapshots.size();
}

bool SnapshotFilter::matches(const SuggestionSnapshot& s) const {
  if (engine && s.engine != *engine) return false;
  if (from && s.timestamp < *from) return false;
  if (to && s.timestamp > *to) return false;
  if (term_ids && !term_ids->contains(s.term_id)) return false;
  return true;
}

SnapshotLoad parse_snapshot_lines(std::string_view text, const SnapshotFilter& filter,
                                  bool strict) {
  SnapshotLoad result;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty()) continue;
    try {
      auto snap = snapshot_from_json_line(line);
      if (filter.matches(snap)) result.snapshots.push_back(std::move(snap));
    } catch (const Error& e) {
      if (strict) {
        throw Error(ErrorKind::validation, "line " + std::to_string(line_no) + ": " + e.what());
      }
      result.issues.push_back({line_no, e.what()});
    }
  }
  return result;
}

SnapshotLoad load_snapshots(const std::filesystem::path& path, const SnapshotFilter& filter,
                            bool strict) {
  return parse_snapshot_lines(read_file(path), filter, strict);
}

}  // namespace qsbias
